//! Comparison methods: the previous-frame baseline and depth warping by
//! pyramidal Farnebäck optical flow.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthImage, GrayImage, RgbImage};
use crate::loss::ValidityMask;

pub const FLOW_MAGIC: &[u8; 4] = b"FLOW";
/// Added to the normal matrix diagonal before each 2×2 solve.
pub const REGULARIZATION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub levels: usize,
    pub pyr_scale: f64,
    pub win_size: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            levels: 3,
            pyr_scale: 0.5,
            win_size: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::config("flow levels must be at least 1"));
        }
        if self.pyr_scale != 0.5 {
            return Err(Error::config("only pyr_scale 0.5 is supported"));
        }
        if self.win_size.is_multiple_of(2) || self.poly_n.is_multiple_of(2) {
            return Err(Error::config("win_size and poly_n must be odd"));
        }
        if self.iterations == 0 || self.poly_sigma <= 0.0 {
            return Err(Error::config("iterations and poly_sigma must be positive"));
        }
        Ok(())
    }
}

/// Per-pixel `(dx, dy)` displacement in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![0.0; 2 * width * height],
        }
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        FlowField {
            width,
            height,
            data: [dx, dy].repeat(width * height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = 2 * (y * self.width + x);
        (self.data[i], self.data[i + 1])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: (f32, f32)) {
        let i = 2 * (y * self.width + x);
        self.data[i] = d.0;
        self.data[i + 1] = d.1;
    }

    /// Interleaved `dx, dy`.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn mean_magnitude(&self) -> f64 {
        let n = self.width * self.height;
        self.data
            .chunks_exact(2)
            .map(|d| (d[0] as f64).hypot(d[1] as f64))
            .sum::<f64>()
            / n.max(1) as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.data.len());
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], file: &str) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != FLOW_MAGIC {
            return Err(Error::format(file, "not a flow file"));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() != 8 * width * height {
            return Err(Error::format(
                file,
                format!("{} payload bytes for a {width}x{height} field", body.len()),
            ));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(FlowField { width, height, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Luma on the 0–255 scale.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    GrayImage::from_fn(rgb.width(), rgb.height(), 1, |x, y, _| {
        let p = rgb.pixel(x, y);
        0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32
    })
}

/// Local quadratic model `f(p + x) ≈ xᵀ A x + bᵀ x + c` per pixel.
#[derive(Clone, Debug)]
pub struct PolyExpansion {
    width: usize,
    height: usize,
    /// Per pixel: `c, b1, b2, a11, a22, a12`.
    coef: Vec<[f64; 6]>,
}

impl PolyExpansion {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn c(&self, x: usize, y: usize) -> f64 {
        self.coef[y * self.width + x][0]
    }

    pub fn b(&self, x: usize, y: usize) -> [f64; 2] {
        let k = &self.coef[y * self.width + x];
        [k[1], k[2]]
    }

    /// Symmetric `[[a11, a12], [a12, a22]]`.
    pub fn a(&self, x: usize, y: usize) -> [[f64; 2]; 2] {
        let k = &self.coef[y * self.width + x];
        [[k[3], k[5]], [k[5], k[4]]]
    }

    /// Bilinear lookup with clamping to the image.
    fn sample(&self, x: f64, y: f64) -> [f64; 6] {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let at = |xx: usize, yy: usize| &self.coef[yy * self.width + xx];
        let mut out = [0.0; 6];
        for (k, o) in out.iter_mut().enumerate() {
            let top = at(x0, y0)[k] * (1.0 - fx) + at(x1, y0)[k] * fx;
            let bot = at(x0, y1)[k] * (1.0 - fx) + at(x1, y1)[k] * fx;
            *o = top * (1.0 - fy) + bot * fy;
        }
        out
    }
}

fn gaussian(radius: usize, sigma: f64) -> Vec<f64> {
    (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Correlates each row (horizontal) or column with `kernel`, replicating
/// the border.
fn correlate(src: &[f64], w: usize, h: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, &k) in kernel.iter().enumerate() {
                let o = i as isize - r;
                let idx = if horizontal {
                    y * w + (x as isize + o).clamp(0, w as isize - 1) as usize
                } else {
                    (y as isize + o).clamp(0, h as isize - 1) as usize * w + x
                };
                s += k * src[idx];
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn invert6(m: [[f64; 6]; 6]) -> [[f64; 6]; 6] {
    let mut a = m;
    let mut inv = [[0.0; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let piv = (col..6).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("rows");
        a.swap(col, piv);
        inv.swap(col, piv);
        let p = a[col][col];
        for j in 0..6 {
            a[col][j] /= p;
            inv[col][j] /= p;
        }
        for i in 0..6 {
            if i != col {
                let f = a[i][col];
                for j in 0..6 {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

/// Gaussian-weighted least-squares quadratic fit over a `(2·poly_n+1)²`
/// neighborhood, via separable correlations with `g·xᵃ` and `g·yᵇ`.
pub fn poly_expansion(gray: &GrayImage, poly_n: usize, poly_sigma: f64) -> PolyExpansion {
    let (w, h) = (gray.width(), gray.height());
    let g = gaussian(poly_n, poly_sigma);
    let xs: Vec<f64> = (0..g.len()).map(|i| i as f64 - poly_n as f64).collect();
    let k0 = g.clone();
    let k1: Vec<f64> = g.iter().zip(&xs).map(|(g, x)| g * x).collect();
    let k2: Vec<f64> = g.iter().zip(&xs).map(|(g, x)| g * x * x).collect();

    // Moments m[(a, b)] = Σ g(x)g(y) xᵃ yᵇ f(p + (x, y)).
    let src: Vec<f64> = gray.data().iter().map(|&v| v as f64).collect();
    let r0 = correlate(&src, w, h, &k0, true);
    let r1 = correlate(&src, w, h, &k1, true);
    let r2 = correlate(&src, w, h, &k2, true);
    let m00 = correlate(&r0, w, h, &k0, false);
    let m10 = correlate(&r1, w, h, &k0, false);
    let m01 = correlate(&r0, w, h, &k1, false);
    let m20 = correlate(&r2, w, h, &k0, false);
    let m02 = correlate(&r0, w, h, &k2, false);
    let m11 = correlate(&r1, w, h, &k1, false);

    // Gram matrix of the basis {1, x, y, x², y², xy} under the window.
    let basis = |x: f64, y: f64| [1.0, x, y, x * x, y * y, x * y];
    let mut gram = [[0.0; 6]; 6];
    for (j, &y) in xs.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            let wgt = g[i] * g[j];
            let b = basis(x, y);
            for r in 0..6 {
                for c in 0..6 {
                    gram[r][c] += wgt * b[r] * b[c];
                }
            }
        }
    }
    let ginv = invert6(gram);

    let coef = (0..w * h)
        .map(|i| {
            let m = [m00[i], m10[i], m01[i], m20[i], m02[i], m11[i]];
            let mut r = [0.0; 6];
            for (k, rk) in r.iter_mut().enumerate() {
                *rk = (0..6).map(|j| ginv[k][j] * m[j]).sum();
            }
            // Basis coefficient of xy is 2·a12.
            [r[0], r[1], r[2], r[3], r[4], r[5] / 2.0]
        })
        .collect();
    PolyExpansion { width: w, height: h, coef }
}

/// 5×5 binomial blur followed by dropping odd rows and columns.
fn pyr_down(img: &GrayImage) -> GrayImage {
    let k = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let (w, h) = (img.width(), img.height());
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let blurred = correlate(&correlate(&src, w, h, &k, true), w, h, &k, false);
    let (ow, oh) = (w.div_ceil(2), h.div_ceil(2));
    GrayImage::from_fn(ow, oh, 1, |x, y, _| blurred[2 * y * w + 2 * x] as f32)
}

/// Doubles resolution and magnitude of a coarse flow (bilinear).
fn upscale_flow(f: &FlowField, w: usize, h: usize) -> FlowField {
    let mut out = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let (cx, cy) = (
                (x as f64 / 2.0).min((f.width - 1) as f64),
                (y as f64 / 2.0).min((f.height - 1) as f64),
            );
            let (x0, y0) = (cx.floor() as usize, cy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(f.width - 1), (y0 + 1).min(f.height - 1));
            let (fx, fy) = (cx - x0 as f64, cy - y0 as f64);
            let lerp = |k: usize| {
                let at = |xx: usize, yy: usize| f.data[2 * (yy * f.width + xx) + k] as f64;
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                2.0 * (top * (1.0 - fy) + bot * fy)
            };
            out.set(x, y, (lerp(0) as f32, lerp(1) as f32));
        }
    }
    out
}

fn refine(p1: &PolyExpansion, p2: &PolyExpansion, flow: &mut FlowField, cfg: &FlowConfig) {
    let (w, h) = (p1.width, p1.height);
    let radius = cfg.win_size / 2;
    let win = gaussian(radius, 0.3 * radius as f64);
    let norm: f64 = win.iter().sum();
    let win: Vec<f64> = win.iter().map(|v| v / norm).collect();
    for _ in 0..cfg.iterations {
        // Normal-equation terms G = AᵀA and h = AᵀΔb per pixel.
        let mut terms: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; w * h]);
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (dx, dy) = flow.get(x, y);
                let (dx, dy) = (dx as f64, dy as f64);
                let k1 = &p1.coef[i];
                let k2 = p2.sample(x as f64 + dx, y as f64 + dy);
                let a11 = (k1[3] + k2[3]) / 2.0;
                let a22 = (k1[4] + k2[4]) / 2.0;
                let a12 = (k1[5] + k2[5]) / 2.0;
                let db1 = -0.5 * (k2[1] - k1[1]) + a11 * dx + a12 * dy;
                let db2 = -0.5 * (k2[2] - k1[2]) + a12 * dx + a22 * dy;
                terms[0][i] = a11 * a11 + a12 * a12;
                terms[1][i] = a12 * (a11 + a22);
                terms[2][i] = a12 * a12 + a22 * a22;
                terms[3][i] = a11 * db1 + a12 * db2;
                terms[4][i] = a12 * db1 + a22 * db2;
            }
        }
        let t: Vec<Vec<f64>> = terms
            .iter()
            .map(|v| correlate(&correlate(v, w, h, &win, true), w, h, &win, false))
            .collect();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let (g11, g12, g22) = (t[0][i] + REGULARIZATION, t[1][i], t[2][i] + REGULARIZATION);
                let det = g11 * g22 - g12 * g12;
                let dx = (g22 * t[3][i] - g12 * t[4][i]) / det;
                let dy = (g11 * t[4][i] - g12 * t[3][i]) / det;
                flow.set(x, y, (dx as f32, dy as f32));
            }
        }
    }
}

/// Dense flow `d` such that `next(p + d(p)) ≈ prev(p)`.
pub fn farneback_flow(prev: &GrayImage, next: &GrayImage, cfg: &FlowConfig) -> Result<FlowField> {
    cfg.validate()?;
    if !prev.same_dims(next) {
        return Err(Error::shape("flow frames differ in size"));
    }
    let mut pyr = vec![(prev.clone(), next.clone())];
    while pyr.len() < cfg.levels {
        let (a, b) = pyr.last().expect("level 0");
        if a.width().min(a.height()) < 2 * (2 * cfg.poly_n + 1) {
            break;
        }
        pyr.push((pyr_down(a), pyr_down(b)));
    }
    let mut flow: Option<FlowField> = None;
    for (a, b) in pyr.iter().rev() {
        let mut f = match flow {
            None => FlowField::zeros(a.width(), a.height()),
            Some(f) => upscale_flow(&f, a.width(), a.height()),
        };
        let p1 = poly_expansion(a, cfg.poly_n, cfg.poly_sigma);
        let p2 = poly_expansion(b, cfg.poly_n, cfg.poly_sigma);
        refine(&p1, &p2, &mut f, cfg);
        flow = Some(f);
    }
    Ok(flow.expect("at least one level"))
}

/// Backward warp: `out(p) = depth(round(p + flow(p)))`. Lookups that leave
/// the frame or hit an invalid source pixel give an invalid output.
pub fn warp_depth(depth: &DepthImage, flow: &FlowField, mask: &ValidityMask) -> Result<(DepthImage, ValidityMask)> {
    let (w, h) = (depth.width(), depth.height());
    if (flow.width, flow.height) != (w, h) || (mask.width(), mask.height()) != (w, h) {
        return Err(Error::shape("warp_depth: depth, flow and mask sizes differ"));
    }
    let mut out = DepthImage::new(w, h, 1);
    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = flow.get(x, y);
            let sx = (x as f32 + dx).round();
            let sy = (y as f32 + dy).round();
            if !(sx >= 0.0 && sy >= 0.0 && sx < w as f32 && sy < h as f32) {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            let v = depth.get(sx, sy, 0);
            if v != 0 && mask.get(sx, sy) {
                out.set(x, y, 0, v);
                bits[y * w + x] = true;
            }
        }
    }
    Ok((out, ValidityMask::from_bits(w, h, bits)?))
}

/// The previous depth frame, unchanged.
pub fn naive_baseline(d_t: &DepthImage) -> DepthImage {
    d_t.clone()
}

/// Flow baseline for one sample: flow from `C_next` back to `C_t`, then
/// warp `D_t` with it.
pub fn flow_baseline(c_t: &RgbImage, d_t: &DepthImage, c_next: &RgbImage, cfg: &FlowConfig) -> Result<DepthImage> {
    let flow = farneback_flow(&to_grayscale(c_next), &to_grayscale(c_t), cfg)?;
    let mask = crate::loss::validity_mask(d_t);
    Ok(warp_depth(d_t, &flow, &mask)?.0)
}
