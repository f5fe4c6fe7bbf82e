//! Finite-difference checks of single layers and of a whole tiny network.

use autodepth::model::{NetworkConfig, NetworkGraph, Sample, SkipFlags};
use autodepth::tensor::gradcheck::{grad_check, relative_error, ConvLayer, MaxPoolLayer, ReluLayer};
use autodepth::tensor::{Padding, Param, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn main() -> autodepth::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(&mut rng, [2, 6, 6, 3]);
    let mut conv = ConvLayer {
        kernel: Param::new(random(&mut rng, [3, 3, 3, 4])),
        bias: Param::new(random(&mut rng, [1, 1, 1, 4])),
        stride: 1,
        padding: Padding::Same,
    };
    for (name, r) in [
        ("conv2d", grad_check(&mut conv, &x, 1)?),
        ("maxpool", grad_check(&mut MaxPoolLayer, &x, 2)?),
        ("relu", grad_check(&mut ReluLayer, &x, 3)?),
    ] {
        println!("{name:<8} max relative error {:.2e} over {} coordinates", r.max_rel_error, r.checked);
    }

    // Whole network: loss gradient vs central differences on a few weights.
    let cfg = NetworkConfig {
        cascades: 2,
        base_filters: 4,
        input_h: 16,
        input_w: 16,
        skips: SkipFlags::ALL,
        separable: false,
        bottleneck_convs: 1,
    };
    let mut net = NetworkGraph::<f64>::build(&cfg, 9)?;
    let img = |rng: &mut ChaCha8Rng, c| Tensor::from_fn([1, 16, 16, c], |_, _, _, _| rng.gen_range(0.05..1.0));
    let sample = Sample::new(img(&mut rng, 3), img(&mut rng, 1), img(&mut rng, 3), img(&mut rng, 1))?;
    net.loss_and_grads(std::slice::from_ref(&sample))?;
    let analytic: Vec<f64> = net.params_mut().iter().map(|p| p.grad.data()[0]).collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = net.params_mut()[i].value.data()[0];
        net.params_mut()[i].value.data_mut()[0] = orig + h;
        let plus = net.loss(std::slice::from_ref(&sample))?;
        net.params_mut()[i].value.data_mut()[0] = orig - h;
        let minus = net.loss(std::slice::from_ref(&sample))?;
        net.params_mut()[i].value.data_mut()[0] = orig;
        worst = worst.max(relative_error(*a, (plus - minus) / (2.0 * h)));
    }
    println!("network  max relative error {worst:.2e} over {} parameters", analytic.len());
    Ok(())
}
