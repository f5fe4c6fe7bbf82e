use autodepth::flow::{farneback_flow, poly_expansion, warp_depth, FlowConfig, FlowField};
use autodepth::image::{DepthImage, GrayImage};
use autodepth::loss::validity_mask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth random texture: a sum of sinusoids with random wave vectors.
fn texture(seed: u64) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..12)
        .map(|_| {
            let freq = rng.gen_range(0.08..0.45);
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            (freq * theta.cos(), freq * theta.sin(), rng.gen_range(0.0..6.3), rng.gen_range(5.0..15.0))
        })
        .collect();
    move |x, y| 128.0 + waves.iter().map(|&(kx, ky, ph, amp)| amp * (kx * x + ky * y + ph).sin()).sum::<f64>()
}

fn render(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> GrayImage {
    GrayImage::from_fn(w, h, 1, |x, y, _| f(x as f64, y as f64) as f32)
}

fn interior_epe(flow: &FlowField, truth: (f64, f64), margin: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0;
    for y in margin..flow.height() - margin {
        for x in margin..flow.width() - margin {
            let (dx, dy) = flow.get(x, y);
            s += (dx as f64 - truth.0).hypot(dy as f64 - truth.1);
            n += 1;
        }
    }
    s / n as f64
}

#[test]
fn recovers_integer_translations() {
    let cfg = FlowConfig::default();
    for (seed, (tx, ty)) in [(1, (3.0, 0.0)), (2, (0.0, -2.0)), (3, (-4.0, 3.0)), (4, (5.0, 0.0))] {
        let f = texture(seed);
        let prev = render(96, 64, &f);
        let next = render(96, 64, |x, y| f(x - tx, y - ty));
        let flow = farneback_flow(&prev, &next, &cfg).unwrap();
        let epe = interior_epe(&flow, (tx, ty), 12);
        assert!(epe < 0.5, "shift ({tx}, {ty}): EPE {epe}");
    }
}

#[test]
fn identical_and_textureless_frames() {
    let f = texture(9);
    let img = render(96, 54, &f);
    let cfg = FlowConfig::default();
    let still = farneback_flow(&img, &img, &cfg).unwrap();
    assert!(still.mean_magnitude() < 0.05, "{}", still.mean_magnitude());

    let flat = render(40, 40, |_, _| 77.0);
    let z = farneback_flow(&flat, &flat, &cfg).unwrap();
    assert!(z.data().iter().all(|v| v.abs() < 1e-6));
    let again = farneback_flow(&img, &render(96, 54, |x, y| f(x - 1.0, y)), &cfg).unwrap();
    let again2 = farneback_flow(&img, &render(96, 54, |x, y| f(x - 1.0, y)), &cfg).unwrap();
    assert_eq!(again, again2);
}

#[test]
fn quadratic_patch_coefficients() {
    // f(u, v) = xᵀAx + bᵀx + c around the center (20, 20).
    let (a11, a12, a22) = (0.7, -0.3, 0.25);
    let (b1, b2, c) = (1.5, -2.0, 30.0);
    let img = GrayImage::from_fn(41, 41, 1, |u, v, _| {
        let (x, y) = (u as f64 - 20.0, v as f64 - 20.0);
        (a11 * x * x + 2.0 * a12 * x * y + a22 * y * y + b1 * x + b2 * y + c) as f32
    });
    let p = poly_expansion(&img, 5, 1.1);
    let a = p.a(20, 20);
    let b = p.b(20, 20);
    let close = |got: f64, want: f64| assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    close(a[0][0], a11);
    close(a[0][1], a12);
    close(a[1][1], a22);
    close(b[0], b1);
    close(b[1], b2);
    close(p.c(20, 20), c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn warp_never_invents_depth(
        w in 2usize..12, h in 2usize..12, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = DepthImage::from_fn(w, h, 1, |_, _, _| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(1..6000) });
        let mut flow = FlowField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                flow.set(x, y, (rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)));
            }
        }
        let mask = validity_mask(&depth);
        let (out, om) = warp_depth(&depth, &flow, &mask).unwrap();
        for y in 0..h {
            for x in 0..w {
                let v = out.get(x, y, 0);
                prop_assert_eq!(om.get(x, y), v != 0);
                if v != 0 {
                    prop_assert!(depth.data().contains(&v));
                }
            }
        }
    }
}
