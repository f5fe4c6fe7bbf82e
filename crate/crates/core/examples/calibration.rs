//! Lens undistortion and depth alignment into a second camera.

use autodepth::calib::{depth_to_pointcloud, project_to_camera, CameraIntrinsics, Extrinsics};
use autodepth::image::DepthImage;

fn main() -> autodepth::Result<()> {
    let lens = CameraIntrinsics {
        k1: -0.2,
        k2: 0.03,
        ..CameraIntrinsics::pinhole(300.0, 300.0, 159.5, 119.5, 320, 240)
    };
    for (u, v) in [(10.0, 10.0), (300.0, 40.0), (159.5, 119.5)] {
        let (xu, yu) = lens.undistort_pixel(u, v);
        let (xd, yd) = lens.distort_pixel(xu, yu);
        println!("({u:>5.1}, {v:>5.1}) -> ideal ({xu:>7.2}, {yu:>7.2}) -> back ({xd:.4}, {yd:.4})");
    }

    let depth_cam = CameraIntrinsics::pinhole(120.0, 120.0, 31.5, 23.5, 64, 48);
    let color_cam = CameraIntrinsics::pinhole(150.0, 150.0, 39.5, 29.5, 80, 60);
    let depth = DepthImage::from_fn(64, 48, 1, |x, y, _| if (20..40).contains(&x) && (15..30).contains(&y) { 900 } else { 2500 });
    let cloud = depth_to_pointcloud(&depth, &depth_cam)?;
    // Color camera 25 mm to the right of the depth camera.
    let aligned = project_to_camera(&cloud, &Extrinsics::from_translation([-0.025, 0.0, 0.0]), &color_cam, (80, 60));
    let holes = aligned.data().iter().filter(|&&d| d == 0).count();
    println!("{} points lifted, {} of {} aligned pixels empty", cloud.points.len(), holes, aligned.data().len());
    Ok(())
}
