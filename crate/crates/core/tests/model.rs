use autodepth::model::{load_weights, read_weights, save_weights, write_weights, NetworkConfig, NetworkGraph, Sample, SkipFlags};
use autodepth::tensor::{AdamConfig, Tensor};
use autodepth::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(h: usize, w: usize) -> NetworkConfig {
    NetworkConfig {
        cascades: 2,
        base_filters: 4,
        input_h: h,
        input_w: w,
        skips: SkipFlags::ALL,
        separable: false,
        bottleneck_convs: 2,
    }
}

fn random_sample<T: autodepth::tensor::Scalar>(h: usize, w: usize, seed: u64) -> Sample<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |c: usize, holes: bool| {
        Tensor::from_fn([1, h, w, c], |_, _, _, _| {
            if holes && rng.gen_bool(0.2) {
                T::ZERO
            } else {
                T::from_f64(rng.gen_range(0.05..1.0))
            }
        })
    };
    let c_t = t(3, false);
    let d_t = t(1, true);
    let c_next = t(3, false);
    let gt = t(1, true);
    Sample::new(c_t, d_t, c_next, gt).unwrap()
}

/// Parameter count from a layer-by-layer listing written out by hand.
fn hand_count(cfg: &NetworkConfig) -> usize {
    let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
    let up = |cin: usize, cout: usize| 4 * cin * cout + cout;
    let f = |l: usize| cfg.base_filters * (1 << l);
    let k = cfg.cascades;
    let mut total = 0;
    for cin0 in [6, 1] {
        for l in 0..k {
            let cin = if l == 0 { cin0 } else { f(l - 1) };
            total += conv(3, cin, f(l)) + conv(3, f(l), f(l));
        }
    }
    total += conv(3, 2 * f(k - 1), f(k));
    total += (cfg.bottleneck_convs - 1) * conv(3, f(k), f(k));
    for l in 0..k {
        let mut extra = 0;
        if l == 0 {
            extra += cfg.skips.d_input as usize * f(0) + cfg.skips.cnext_input as usize * f(0);
        }
        if (l == 1 && cfg.skips.enc_dec_level1) || (l == 2 && cfg.skips.enc_dec_level2 && l < k) {
            extra += 2 * f(l);
        }
        total += up(f(l + 1), f(l)) + conv(3, f(l) + extra, f(l)) + conv(3, f(l), f(l));
    }
    total + conv(1, f(0), 1)
}

#[test]
fn tiny_param_count() {
    let cfg = tiny(32, 32);
    let net = NetworkGraph::<f32>::build(&cfg, 1).unwrap();
    // 1248 + 1068 (encoders) + 4640 (bottleneck) + 2840 + 716 (decoder) + 5 (head)
    assert_eq!(net.param_count(), 10517);
    assert_eq!(hand_count(&cfg), 10517);

    for skips in [SkipFlags::NONE, SkipFlags { d_input: false, ..SkipFlags::ALL }] {
        for cascades in 2..=4 {
            let c = NetworkConfig {
                cascades,
                skips,
                ..tiny(32, 32)
            };
            assert_eq!(NetworkGraph::<f32>::build(&c, 0).unwrap().param_count(), hand_count(&c));
        }
    }
}

#[test]
fn param_count_monotone() {
    let mut prev = 0;
    for cascades in 2..=5 {
        let n = NetworkGraph::<f32>::build(&NetworkConfig { cascades, ..tiny(64, 64) }, 0)
            .unwrap()
            .param_count();
        assert!(n > prev, "cascades {cascades}: {n} <= {prev}");
        prev = n;
    }
    let mut prev = 0;
    for base_filters in [4, 8, 16] {
        let n = NetworkGraph::<f32>::build(&NetworkConfig { base_filters, ..tiny(32, 32) }, 0)
            .unwrap()
            .param_count();
        assert!(n > prev);
        prev = n;
    }
}

#[test]
fn separable_has_fewer_params() {
    let dense = NetworkGraph::<f32>::build(&NetworkConfig::desk_default(), 0).unwrap();
    let sep = NetworkGraph::<f32>::build(
        &NetworkConfig {
            separable: true,
            ..NetworkConfig::desk_default()
        },
        0,
    )
    .unwrap();
    assert!(sep.param_count() < dense.param_count());
    let s = random_sample::<f32>(54, 96, 3);
    assert_eq!(sep.forward(&s).unwrap().dims().as_array(), [1, 54, 96, 1]);
}

#[test]
fn odd_geometry_forward() {
    for (h, w) in [(54, 96), (27, 48), (13, 21)] {
        let net = NetworkGraph::<f32>::build(&tiny(h, w), 0).unwrap();
        let out = net.forward(&random_sample(h, w, 1)).unwrap();
        assert_eq!(out.dims().as_array(), [1, h, w, 1]);
        assert!(out.all_finite());
    }
    let net = NetworkGraph::<f32>::build(&tiny(32, 32), 0).unwrap();
    assert!(matches!(net.forward(&random_sample(16, 32, 0)), Err(Error::Shape(_))));
}

#[test]
fn seed_determinism() {
    let cfg = tiny(16, 16);
    let a = NetworkGraph::<f32>::build(&cfg, 7).unwrap();
    let b = NetworkGraph::<f32>::build(&cfg, 7).unwrap();
    let c = NetworkGraph::<f32>::build(&cfg, 8).unwrap();
    assert_eq!(write_weights(&a), write_weights(&b));
    assert_ne!(write_weights(&a), write_weights(&c));
}

#[test]
fn zero_head_gives_constant_output() {
    let mut net = NetworkGraph::<f32>::build(&tiny(16, 16), 3).unwrap();
    net.zero_head();
    let out = net.forward(&random_sample(16, 16, 5)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_learning_rate_keeps_params() {
    let mut net = NetworkGraph::<f32>::build(&tiny(16, 16), 3).unwrap();
    let before = write_weights(&net);
    let adam = AdamConfig {
        lr: 0.0,
        ..AdamConfig::default()
    };
    let batch = [random_sample(16, 16, 1), random_sample(16, 16, 2)];
    net.train_step(&batch, &adam).unwrap();
    assert_eq!(write_weights(&net), before);
}

#[test]
fn overfits_single_sample() {
    let mut net = NetworkGraph::<f32>::build(&tiny(32, 32), 11).unwrap();
    let s = random_sample::<f32>(32, 32, 4);
    // Smooth target so the network can actually fit it.
    let gt = Tensor::from_fn([1, 32, 32, 1], |_, y, x, _| 0.3 + 0.4 * (x as f32 / 31.0) * (y as f32 / 31.0));
    let s = Sample::new(s.c_t, s.d_t, s.c_next, gt).unwrap();
    let batch = [s];
    let adam = AdamConfig::default();
    let first = net.loss(&batch).unwrap();
    let mut last = first;
    for _ in 0..500 {
        last = net.train_step(&batch, &adam).unwrap();
    }
    let last = last.min(net.loss(&batch).unwrap());
    assert!(last < 0.01, "loss {first} -> {last}");
}

#[test]
fn end_to_end_gradient() {
    let cfg = tiny(16, 16);
    let mut net = NetworkGraph::<f64>::build(&cfg, 5).unwrap();
    // Zero biases put dead units exactly on the ReLU kink; move to a generic point.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let is_bias: Vec<bool> = net.named_params().iter().map(|(n, _)| n.ends_with(".bias")).collect();
    for (p, bias) in net.params_mut().into_iter().zip(is_bias) {
        if bias {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.05..0.05));
        }
    }
    let batch = [random_sample::<f64>(16, 16, 9)];
    net.loss_and_grads(&batch).unwrap();
    let analytic: Vec<Vec<f64>> = net.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();

    // Bias perturbations touch every pixel; 1e-5 steps push a few units across
    // the ReLU kink, so the whole-network check uses a finer step.
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let n_params = analytic.len();
    for pi in 0..n_params {
        let len = analytic[pi].len();
        for _ in 0..3 {
            let j = rng.gen_range(0..len);
            let orig = net.params_mut()[pi].value.data()[j];
            net.params_mut()[pi].value.data_mut()[j] = orig + h;
            let plus = net.loss(&batch).unwrap();
            net.params_mut()[pi].value.data_mut()[j] = orig - h;
            let minus = net.loss(&batch).unwrap();
            net.params_mut()[pi].value.data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.bin");
    let cfg = tiny(16, 16);
    let net = NetworkGraph::<f32>::build(&cfg, 21).unwrap();
    save_weights(&net, &path).unwrap();
    let back = load_weights(&path, Some(&cfg)).unwrap();
    let s = random_sample(16, 16, 0);
    assert_eq!(net.forward(&s).unwrap(), back.forward(&s).unwrap());
    // Input geometry is not part of the architecture.
    assert!(load_weights(&path, Some(&cfg.with_input(32, 48))).is_ok());

    let bytes = write_weights(&net);
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(read_weights(&bytes[..cut], "w", None), Err(Error::Format { .. })), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_weights(&bad, "w", None), Err(Error::Format { .. })));

    let other = NetworkConfig { cascades: 3, ..cfg };
    match load_weights(&path, Some(&other)) {
        Err(e @ Error::Format { .. }) => assert!(e.to_string().contains("cascades"), "{e}"),
        r => panic!("expected format error, got {r:?}"),
    }
    let other = NetworkConfig {
        skips: SkipFlags { d_input: false, ..SkipFlags::ALL },
        ..cfg
    };
    match load_weights(&path, Some(&other)) {
        Err(e @ Error::Format { .. }) => assert!(e.to_string().contains("skip_D_input"), "{e}"),
        r => panic!("expected format error, got {r:?}"),
    }
}

#[test]
fn non_finite_gradient_rejected() {
    let mut net = NetworkGraph::<f32>::build(&tiny(16, 16), 3).unwrap();
    let before = write_weights(&net);
    let mut s = random_sample::<f32>(16, 16, 1);
    s.c_t.data_mut()[0] = f32::NAN;
    assert!(matches!(net.train_step(&[s], &AdamConfig::default()), Err(Error::Training(_))));
    assert_eq!(write_weights(&net), before);
}
