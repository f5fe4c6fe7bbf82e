//! Plain interleaved images used at the data boundary (sensor frames,
//! grayscale flow inputs, masks) before conversion into [`Tensor`]s.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<P> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<P>,
}

/// 8-bit interleaved RGB.
pub type RgbImage = Image<u8>;
/// 16-bit depth in millimeters; 0 marks an invalid measurement.
pub type DepthImage = Image<u16>;
pub type GrayImage = Image<f32>;

impl<P: Copy + Default> Image<P> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![P::default(); width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<P>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> P) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[P] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [P] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<P> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> P {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: P) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[P] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [P] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    pub fn same_dims<Q>(&self, other: &Image<Q>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl RgbImage {
    /// `1 × h × w × 3` tensor scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let data = self.data.iter().map(|&v| v as f32 / 255.0).collect();
        Tensor::from_vec([1, self.height, self.width, self.channels], data).expect("image dims")
    }
}

impl DepthImage {
    /// `1 × h × w × 1` tensor of `depth / max_depth_mm`.
    pub fn to_tensor(&self, max_depth_mm: f32) -> Tensor<f32> {
        let data = self.data.iter().map(|&v| v as f32 / max_depth_mm).collect();
        Tensor::from_vec([1, self.height, self.width, 1], data).expect("image dims")
    }

    /// Inverse of [`DepthImage::to_tensor`] for a single-image tensor;
    /// values are clamped to the 16-bit range and rounded to whole millimeters.
    pub fn from_tensor(t: &Tensor<f32>, max_depth_mm: f32) -> Result<Self> {
        let d = t.dims();
        if d.n != 1 || d.c != 1 {
            return Err(Error::shape(format!("depth tensor must be 1xHxWx1, got {d}")));
        }
        let data = t
            .data()
            .iter()
            .map(|&v| (v * max_depth_mm).round().clamp(0.0, u16::MAX as f32) as u16)
            .collect();
        Image::from_vec(d.w, d.h, 1, data)
    }
}
