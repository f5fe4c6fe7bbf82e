//! Frame preprocessing ahead of the network: lens correction, depth
//! alignment into the color camera, center crop, optional half-resolution
//! downscale.

use crate::calib::{center_crop, resize_nearest, undistort_image, Calibration};
use crate::error::Result;
use crate::image::{DepthImage, RgbImage};

#[derive(Clone, Debug, PartialEq)]
pub struct Preprocess {
    pub calibration: Calibration,
    pub crop_factor: usize,
    /// Downscale the cropped frames by 2 on each axis.
    pub half: bool,
}

impl Preprocess {
    pub fn new(calibration: Calibration, crop_factor: usize, half: bool) -> Self {
        Preprocess {
            calibration,
            crop_factor,
            half,
        }
    }

    /// `(w, h)` of the cropped frame, before any half-resolution downscale.
    pub fn crop_dims(&self) -> (usize, usize) {
        let c = &self.calibration.intrinsics_color;
        (c.width / self.crop_factor, c.height / self.crop_factor)
    }

    /// `(w, h)` fed to the network.
    pub fn network_dims(&self) -> (usize, usize) {
        let (w, h) = self.crop_dims();
        if self.half {
            (w / 2, h / 2)
        } else {
            (w, h)
        }
    }

    fn shrink<P: Copy + Default>(&self, img: crate::image::Image<P>) -> crate::image::Image<P> {
        if self.half {
            resize_nearest(&img, img.width() / 2, img.height() / 2)
        } else {
            img
        }
    }

    pub fn color(&self, img: &RgbImage) -> Result<RgbImage> {
        let u = undistort_image(img, &self.calibration.intrinsics_color);
        Ok(self.shrink(center_crop(&u, self.crop_factor)?))
    }

    /// Aligned and cropped depth at crop resolution (no downscale).
    pub fn depth_cropped(&self, d: &DepthImage) -> Result<DepthImage> {
        center_crop(&self.calibration.align_depth(d)?, self.crop_factor)
    }

    pub fn depth(&self, d: &DepthImage) -> Result<DepthImage> {
        Ok(self.shrink(self.depth_cropped(d)?))
    }
}
