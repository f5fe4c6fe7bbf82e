//! Pinhole cameras with Brown–Conrady distortion, depth reprojection
//! between cameras, and the crop/resize helpers used before inference.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthImage, Image};

/// Fixed-point iterations used to invert the distortion model.
pub const UNDISTORT_ITERATIONS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    /// Distortion-free camera.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::config(format!("focal lengths must be positive (fx {}, fy {})", self.fx, self.fy)));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::config(format!(
                "principal point ({}, {}) outside {}x{}",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn is_distortion_free(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2].iter().all(|&k| k == 0.0)
    }

    /// Applies the distortion model to normalized coordinates.
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xy = x * y;
        (
            x * radial + 2.0 * self.p1 * xy + self.p2 * (r2 + 2.0 * x * x),
            y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * xy,
        )
    }

    /// Inverts [`CameraIntrinsics::distort`] by fixed-point iteration.
    pub fn undistort(&self, xd: f64, yd: f64) -> (f64, f64) {
        let (mut x, mut y) = (xd, yd);
        for _ in 0..UNDISTORT_ITERATIONS {
            let r2 = x * x + y * y;
            let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
            let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
            x = (xd - dx) / radial;
            y = (yd - dy) / radial;
        }
        (x, y)
    }

    pub fn to_normalized(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.cx) / self.fx, (v - self.cy) / self.fy)
    }

    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (self.fx * x + self.cx, self.fy * y + self.cy)
    }

    /// Pixel position in the distorted image of an ideal (undistorted) pixel.
    pub fn distort_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let (x, y) = self.to_normalized(u, v);
        let (xd, yd) = self.distort(x, y);
        self.to_pixel(xd, yd)
    }

    /// Ideal pixel position of a pixel observed in the distorted image.
    pub fn undistort_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let (xd, yd) = self.to_normalized(u, v);
        let (x, y) = self.undistort(xd, yd);
        self.to_pixel(x, y)
    }

    /// Intrinsics of the central `1/factor` crop.
    pub fn center_cropped(&self, factor: usize) -> Self {
        let (w, h) = (self.width / factor, self.height / factor);
        CameraIntrinsics {
            cx: self.cx - ((self.width - w) / 2) as f64,
            cy: self.cy - ((self.height - h) / 2) as f64,
            width: w,
            height: h,
            ..*self
        }
    }
}

/// Rigid transform from the depth-camera frame to the color-camera frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extrinsics {
    /// Row-major 3×3.
    pub rotation: [f64; 9],
    pub translation_m: [f64; 3],
}

impl Extrinsics {
    pub const IDENTITY: Extrinsics = Extrinsics {
        rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        translation_m: [0.0; 3],
    };

    pub fn from_translation(t: [f64; 3]) -> Self {
        Extrinsics {
            translation_m: t,
            ..Self::IDENTITY
        }
    }

    /// Rotation about the camera's y axis by `angle` radians, then translation.
    pub fn from_yaw(angle: f64, t: [f64; 3]) -> Self {
        let (s, c) = angle.sin_cos();
        Extrinsics {
            rotation: [c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c],
            translation_m: t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[k * 3 + i] * r[k * 3 + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::config("extrinsic rotation is not orthonormal"));
                }
            }
        }
        let det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6])
            + r[2] * (r[3] * r[7] - r[4] * r[6]);
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("extrinsic rotation has determinant {det}")));
        }
        Ok(())
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation_m;
        [
            r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + t[0],
            r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + t[1],
            r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + t[2],
        ]
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &Extrinsics) -> Extrinsics {
        let (a, b) = (&self.rotation, &first.rotation);
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = (0..3).map(|k| a[i * 3 + k] * b[k * 3 + j]).sum();
            }
        }
        let translation_m = self.apply(first.translation_m);
        Extrinsics {
            rotation,
            translation_m,
        }
    }

    pub fn inverse(&self) -> Extrinsics {
        let r = &self.rotation;
        let rt = [r[0], r[3], r[6], r[1], r[4], r[7], r[2], r[5], r[8]];
        let inv = Extrinsics {
            rotation: rt,
            translation_m: [0.0; 3],
        };
        let t = inv.apply(self.translation_m);
        Extrinsics {
            rotation: rt,
            translation_m: [-t[0], -t[1], -t[2]],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraFrame {
    Depth,
    Color,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    /// Meters.
    pub xyz: [f64; 3],
    /// Row-major source pixel index.
    pub pixel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
    pub frame: CameraFrame,
}

/// Calibration file contents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub intrinsics_depth: CameraIntrinsics,
    pub intrinsics_color: CameraIntrinsics,
    pub extrinsics: Extrinsics,
}

impl Calibration {
    /// Both cameras share one distortion-free pinhole and one optical center.
    pub fn shared_pinhole(width: usize, height: usize, fov_x_deg: f64) -> Self {
        let f = width as f64 / 2.0 / (fov_x_deg.to_radians() / 2.0).tan();
        let intr = CameraIntrinsics::pinhole(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height);
        Calibration {
            intrinsics_depth: intr,
            intrinsics_color: intr,
            extrinsics: Extrinsics::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics_depth.validate()?;
        self.intrinsics_color.validate()?;
        self.extrinsics.validate()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cal: Calibration =
            serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("calibration serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Undistorts the depth frame and reprojects it into the color camera.
    pub fn align_depth(&self, depth: &DepthImage) -> Result<DepthImage> {
        let d = undistort_depth(depth, &self.intrinsics_depth);
        let cloud = depth_to_pointcloud(&d, &self.intrinsics_depth)?;
        let c = &self.intrinsics_color;
        Ok(project_to_camera(&cloud, &self.extrinsics, c, (c.width, c.height)))
    }
}

/// Pixel types that can be bilinearly blended.
pub trait Interpolate: Copy + Default {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl Interpolate for u8 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, 255.0) as u8
    }
}

impl Interpolate for u16 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v.round().clamp(0.0, u16::MAX as f64) as u16
    }
}

impl Interpolate for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

/// Removes lens distortion: every output pixel looks up its distorted
/// position in `img` and samples it bilinearly. Lookups outside the source
/// give 0. Zero coefficients return an exact copy.
pub fn undistort_image<P: Interpolate>(img: &Image<P>, intr: &CameraIntrinsics) -> Image<P> {
    if intr.is_distortion_free() {
        return img.clone();
    }
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let mut out = Image::new(w, h, ch);
    for v in 0..h {
        for u in 0..w {
            let (su, sv) = intr.distort_pixel(u as f64, v as f64);
            if !(su >= 0.0 && sv >= 0.0 && su <= (w - 1) as f64 && sv <= (h - 1) as f64) {
                continue;
            }
            let (x0, y0) = (su.floor() as usize, sv.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (su - x0 as f64, sv - y0 as f64);
            for c in 0..ch {
                let top = img.get(x0, y0, c).to_f64() * (1.0 - fx) + img.get(x1, y0, c).to_f64() * fx;
                let bot = img.get(x0, y1, c).to_f64() * (1.0 - fx) + img.get(x1, y1, c).to_f64() * fx;
                out.set(u, v, c, P::from_f64(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    out
}

/// Depth variant of [`undistort_image`]: nearest sampling, so no depth is
/// blended across discontinuities or with invalid zeros.
pub fn undistort_depth(img: &DepthImage, intr: &CameraIntrinsics) -> DepthImage {
    if intr.is_distortion_free() {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let mut out = DepthImage::new(w, h, 1);
    for v in 0..h {
        for u in 0..w {
            let (su, sv) = intr.distort_pixel(u as f64, v as f64);
            let (x, y) = (su.round(), sv.round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < w && (y as usize) < h {
                out.set(u, v, 0, img.get(x as usize, y as usize, 0));
            }
        }
    }
    out
}

/// Lifts every valid depth pixel to a 3-D point in the depth camera frame.
pub fn depth_to_pointcloud(depth: &DepthImage, intr: &CameraIntrinsics) -> Result<PointCloud> {
    if (depth.width(), depth.height()) != (intr.width, intr.height) {
        return Err(Error::shape(format!(
            "depth {}x{} vs intrinsics {}x{}",
            depth.width(),
            depth.height(),
            intr.width,
            intr.height
        )));
    }
    let mut points = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            let d = depth.get(u, v, 0);
            if d == 0 {
                continue;
            }
            let z = d as f64 / 1000.0;
            points.push(CloudPoint {
                xyz: [(u as f64 - intr.cx) / intr.fx * z, (v as f64 - intr.cy) / intr.fy * z, z],
                pixel: v * depth.width() + u,
            });
        }
    }
    Ok(PointCloud {
        points,
        frame: CameraFrame::Depth,
    })
}

/// Renders a cloud into the destination camera with a z-buffer; pixels no
/// point lands on stay 0.
pub fn project_to_camera(cloud: &PointCloud, extr: &Extrinsics, intr: &CameraIntrinsics, (w, h): (usize, usize)) -> DepthImage {
    let mut zbuf = vec![f64::INFINITY; w * h];
    for p in &cloud.points {
        let [x, y, z] = extr.apply(p.xyz);
        if z <= 0.0 {
            continue;
        }
        let u = (intr.fx * x / z + intr.cx).round();
        let v = (intr.fy * y / z + intr.cy).round();
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        let i = v as usize * w + u as usize;
        if z < zbuf[i] {
            zbuf[i] = z;
        }
    }
    let data = zbuf
        .into_iter()
        .map(|z| if z.is_finite() { (z * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16 } else { 0 })
        .collect();
    Image::from_vec(w, h, 1, data).expect("buffer sized to dims")
}

/// Central `1/factor` region.
pub fn center_crop<P: Copy + Default>(img: &Image<P>, factor: usize) -> Result<Image<P>> {
    let (w, h) = (img.width(), img.height());
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::config(format!("{w}x{h} is not divisible by crop factor {factor}")));
    }
    let (ow, oh) = (w / factor, h / factor);
    let (x0, y0) = ((w - ow) / 2, (h - oh) / 2);
    let ch = img.channels();
    let mut data = Vec::with_capacity(ow * oh * ch);
    for y in y0..y0 + oh {
        let row = (y * w + x0) * ch;
        data.extend_from_slice(&img.data()[row..row + ow * ch]);
    }
    Image::from_vec(ow, oh, ch, data)
}

/// Nearest-neighbor resize; output pixel `i` reads source `floor(i·src/dst)`.
pub fn resize_nearest<P: Copy + Default>(img: &Image<P>, out_w: usize, out_h: usize) -> Image<P> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let xs: Vec<usize> = (0..out_w).map(|i| i * w / out_w).collect();
    let mut data = Vec::with_capacity(out_w * out_h * ch);
    for j in 0..out_h {
        let sy = j * h / out_h;
        for &sx in &xs {
            data.extend_from_slice(img.pixel(sx, sy));
        }
    }
    Image::from_vec(out_w, out_h, ch, data).expect("buffer sized to dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::pinhole(500.0, 500.0, w as f64 / 2.0, h as f64 / 2.0, w, h)
    }

    #[test]
    fn optical_axis_and_pinhole() {
        let i = intr(1001, 11);
        let mut d = DepthImage::new(1001, 11, 1);
        d.set(500, 5, 0, 1000);
        d.set(1000, 5, 0, 1000);
        let c = depth_to_pointcloud(&d, &CameraIntrinsics { cx: 500.0, cy: 5.0, ..i }).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points[0].xyz, [0.0, 0.0, 1.0]);
        assert_eq!(c.points[1].xyz[0], 1.0);
        assert!(depth_to_pointcloud(&DepthImage::new(1001, 11, 1), &i).unwrap().points.is_empty());
    }

    #[test]
    fn translation_and_zbuffer() {
        let i = intr(40, 30);
        let d = DepthImage::from_fn(40, 30, 1, |x, y, _| if (x + y) % 5 == 0 { 0 } else { 1500 + x as u16 });
        let cloud = depth_to_pointcloud(&d, &i).unwrap();
        assert_eq!(project_to_camera(&cloud, &Extrinsics::IDENTITY, &i, (40, 30)), d);

        let shifted = project_to_camera(&cloud, &Extrinsics::from_translation([0.0, 0.0, 1.0]), &i, (40, 30));
        for p in &cloud.points {
            let z = p.xyz[2] + 1.0;
            let u = (i.fx * p.xyz[0] / z + i.cx).round() as usize;
            let v = (i.fy * p.xyz[1] / z + i.cy).round() as usize;
            assert!(shifted.get(u, v, 0) >= 2500);
        }
        let vals: Vec<u16> = shifted.data().iter().copied().filter(|&v| v != 0).collect();
        assert!(vals.iter().all(|&v| (2500..=2540).contains(&v)));

        let near_far = PointCloud {
            points: vec![
                CloudPoint { xyz: [0.0, 0.0, 2.0], pixel: 0 },
                CloudPoint { xyz: [0.0, 0.0, 1.0], pixel: 1 },
            ],
            frame: CameraFrame::Depth,
        };
        let out = project_to_camera(&near_far, &Extrinsics::IDENTITY, &i, (40, 30));
        assert_eq!(out.get(20, 15, 0), 1000);
        let behind = project_to_camera(&near_far, &Extrinsics::from_translation([0.0, 0.0, -5.0]), &i, (40, 30));
        assert!(behind.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn extrinsics_algebra() {
        let a = Extrinsics::from_yaw(0.3, [0.1, -0.2, 0.05]);
        let b = Extrinsics::from_yaw(-0.7, [0.0, 0.4, 0.2]);
        let c = Extrinsics::from_yaw(1.1, [0.3, 0.0, -0.1]);
        a.validate().unwrap();
        let p = [0.3, -0.4, 2.0];
        let lhs = a.compose(&b).compose(&c).apply(p);
        let rhs = a.compose(&b.compose(&c)).apply(p);
        let back = a.inverse().apply(a.apply(p));
        for k in 0..3 {
            assert!((lhs[k] - rhs[k]).abs() < 1e-12);
            assert!((back[k] - p[k]).abs() < 1e-12);
        }
        let mut bad = Extrinsics::IDENTITY;
        bad.rotation[0] = 1.01;
        assert!(bad.validate().is_err());
        bad.rotation[0] = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn distortion_inverse() {
        let i = CameraIntrinsics {
            k1: -0.3,
            k2: 0.08,
            p1: 0.001,
            p2: -0.0015,
            ..intr(640, 480)
        };
        for &(x, y) in &[(0.0, 0.0), (0.2, -0.1), (-0.4, 0.3), (0.5, 0.35)] {
            let (xd, yd) = i.distort(x, y);
            let (ux, uy) = i.undistort(xd, yd);
            assert!((ux - x).abs() < 1e-6 && (uy - y).abs() < 1e-6, "({x}, {y}) -> ({ux}, {uy})");
        }
        assert_eq!(i.distort_pixel(i.cx, i.cy), (i.cx, i.cy));
    }

    #[test]
    fn zero_distortion_is_exact_copy() {
        let img = Image::<u8>::from_fn(13, 7, 3, |x, y, c| (x * 31 + y * 17 + c) as u8);
        assert_eq!(undistort_image(&img, &intr(13, 7)), img);
    }

    #[test]
    fn crops_and_resizes() {
        let img = Image::<u16>::from_fn(1920, 1080, 1, |x, y, _| if (x, y) == (960, 540) { 7 } else { 0 });
        let c = center_crop(&img, 2).unwrap();
        assert_eq!((c.width(), c.height()), (960, 540));
        assert_eq!(c.get(480, 270, 0), 7);
        assert_eq!(center_crop(&c, 1).unwrap(), c);
        assert!(matches!(center_crop(&Image::<u8>::new(5, 4, 1), 2), Err(Error::Config(_))));

        let half = resize_nearest(&c, 480, 270);
        let full = resize_nearest(&half, 960, 540);
        assert_eq!((full.width(), full.height()), (960, 540));

        let small = Image::<u8>::from_vec(2, 2, 1, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(resize_nearest(&small, 4, 4).data(), &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
        let k = Image::<u8>::from_fn(5, 3, 1, |_, _, _| 9);
        assert!(resize_nearest(&k, 17, 2).data().iter().all(|&v| v == 9));
    }

    #[test]
    fn cropped_intrinsics_follow_pixels() {
        let i = CameraIntrinsics::pinhole(100.0, 100.0, 95.5, 53.5, 192, 108);
        let c = i.center_cropped(2);
        assert_eq!((c.width, c.height), (96, 54));
        assert_eq!((c.cx, c.cy), (47.5, 26.5));
    }
}
