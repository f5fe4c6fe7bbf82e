//! Farnebäck flow on a shifted texture, and depth warping with it.

use autodepth::flow::{farneback_flow, to_grayscale, warp_depth, FlowConfig};
use autodepth::image::{DepthImage, RgbImage};
use autodepth::loss::validity_mask;
use autodepth::synth::texture;

fn main() -> autodepth::Result<()> {
    let (w, h, shift) = (96, 64, 3.0);
    let frame = |dx: f64| {
        RgbImage::from_fn(w, h, 3, |x, y, c| (255.0 * texture(11 + c as u64, x as f64 - dx, y as f64)) as u8)
    };
    let (prev, next) = (frame(0.0), frame(shift));

    // Backward flow: where each pixel of `next` came from in `prev`.
    let flow = farneback_flow(&to_grayscale(&next), &to_grayscale(&prev), &FlowConfig::default())?;
    let mut err = 0.0;
    let mut n = 0;
    for y in 10..h - 10 {
        for x in 10..w - 10 {
            let (dx, dy) = flow.get(x, y);
            err += ((dx as f64 + shift).powi(2) + (dy as f64).powi(2)).sqrt();
            n += 1;
        }
    }
    println!("interior endpoint error {:.3} px", err / n as f64);

    // A depth step that moves with the texture.
    let depth = DepthImage::from_fn(w, h, 1, |x, _, _| if x < 40 { 1200 } else { 3000 });
    let (warped, mask) = warp_depth(&depth, &flow, &validity_mask(&depth))?;
    println!("row 32 around the step: {:?}", &warped.data()[32 * w + 38..32 * w + 46]);
    println!("valid after warp: {} of {}", mask.valid_count(), mask.len());
    Ok(())
}
