use autodepth::calib::{depth_to_pointcloud, project_to_camera, undistort_image, CameraIntrinsics, Extrinsics};
use autodepth::image::{DepthImage, GrayImage};

const W: usize = 320;
const H: usize = 240;
const LINES_X: [f64; 4] = [40.0, 110.0, 210.0, 285.0];
const LINES_Y: [f64; 3] = [30.0, 120.0, 205.0];

/// Bright Gaussian-profile grid lines, as a continuous function.
fn chart(u: f64, v: f64) -> f64 {
    let profile = |d: f64| (-d * d / (2.0 * 1.2 * 1.2)).exp();
    let vx = LINES_X.iter().map(|&x| profile(u - x)).fold(0.0, f64::max);
    let vy = LINES_Y.iter().map(|&y| profile(v - y)).fold(0.0, f64::max);
    255.0 * vx.max(vy)
}

fn barrel() -> CameraIntrinsics {
    CameraIntrinsics {
        k1: -0.25,
        k2: 0.04,
        ..CameraIntrinsics::pinhole(260.0, 260.0, 159.5, 119.5, W, H)
    }
}

/// Max deviation from the least-squares line through the centroids of a
/// vertical line's profile, for rows away from the horizontal lines.
fn straightness(img: &GrayImage, x0: f64) -> f64 {
    let mut pts = Vec::new();
    for v in 20..H - 20 {
        if LINES_Y.iter().any(|&y| (v as f64 - y).abs() < 8.0) {
            continue;
        }
        // Search the bright ridge near x0, then take a local centroid.
        let lo = (x0 as usize).saturating_sub(20);
        let hi = (x0 as usize + 20).min(W - 1);
        let peak = (lo..=hi).max_by(|&a, &b| img.get(a, v, 0).total_cmp(&img.get(b, v, 0))).unwrap();
        let (mut s, mut sw) = (0.0, 0.0);
        for u in peak.saturating_sub(4)..=(peak + 4).min(W - 1) {
            let w = img.get(u, v, 0) as f64;
            s += w * u as f64;
            sw += w;
        }
        pts.push((v as f64, s / sw));
    }
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let b = pts.iter().map(|p| (p.0 - my) * (p.1 - mx)).sum::<f64>() / pts.iter().map(|p| (p.0 - my).powi(2)).sum::<f64>();
    pts.iter().map(|p| (p.1 - (mx + b * (p.0 - my))).abs()).fold(0.0, f64::max)
}

#[test]
fn barrel_round_trip_straightens_lines() {
    let intr = barrel();
    // What the lens records: each sensor pixel sees the ideal chart at its
    // undistorted position.
    let distorted = GrayImage::from_fn(W, H, 1, |u, v, _| {
        let (x, y) = intr.undistort_pixel(u as f64, v as f64);
        chart(x, y) as f32
    });
    let restored = undistort_image(&distorted, &intr);
    for &x0 in &[LINES_X[0], LINES_X[3]] {
        let before = straightness(&distorted, intr.distort_pixel(x0, intr.cy).0);
        let after = straightness(&restored, x0);
        assert!(before > 2.0, "chart not visibly bent ({before})");
        assert!(after < 0.5, "line at {x0}: residual {after}");
    }
}

#[test]
fn principal_point_fixed() {
    let intr = CameraIntrinsics {
        k1: 0.4,
        k2: -0.2,
        p1: 0.01,
        p2: 0.02,
        ..CameraIntrinsics::pinhole(200.0, 210.0, 31.0, 17.0, 64, 40)
    };
    let img = GrayImage::from_fn(64, 40, 1, |u, v, _| (u * 3 + v * 7) as f32);
    let out = undistort_image(&img, &intr);
    assert_eq!(out.get(31, 17, 0), img.get(31, 17, 0));
}

#[test]
fn unproject_project_identity() {
    let intr = CameraIntrinsics::pinhole(150.0, 150.0, 95.5, 53.5, 192, 108);
    let depth = DepthImage::from_fn(192, 108, 1, |x, y, _| {
        if (x * 7 + y * 3) % 11 == 0 {
            0
        } else {
            (800 + (x * 13 + y * 29) % 3000) as u16
        }
    });
    let cloud = depth_to_pointcloud(&depth, &intr).unwrap();
    for p in &cloud.points {
        let (u, v) = (p.pixel % 192, p.pixel / 192);
        let [x, y, z] = p.xyz;
        assert!(z > 0.0);
        assert!((intr.fx * x / z + intr.cx - u as f64).abs() < 1e-9);
        assert!((intr.fy * y / z + intr.cy - v as f64).abs() < 1e-9);
    }
    let back = project_to_camera(&cloud, &Extrinsics::IDENTITY, &intr, (192, 108));
    for (a, b) in depth.data().iter().zip(back.data()) {
        assert!((*a as i32 - *b as i32).abs() <= 1);
    }
}
