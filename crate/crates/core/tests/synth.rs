use std::fs;

use autodepth::loss::{invalid_fraction, validity_mask};
use autodepth::synth::{
    generate_sequence, loso_split, make_samples, read_sequence, synchronize, write_sequence, DatasetSpec, Keyframes,
    SceneRenderer, SceneSpec, SequenceReader, ShapeKind, DEFAULT_INVALID_FRACTION,
};
use autodepth::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec(seed: u64) -> SceneSpec {
    let ds = DatasetSpec {
        width: 64,
        height: 40,
        size_px: [8.0, 16.0],
        ..DatasetSpec::default()
    };
    ds.scene(0, seed, 2.0)
}

#[test]
fn generation_is_deterministic() {
    let spec = small_spec(3);
    let a = generate_sequence(&spec, 11, 0.5, "a").unwrap();
    let b = generate_sequence(&spec, 11, 0.5, "a").unwrap();
    let c = generate_sequence(&spec, 12, 0.5, "a").unwrap();
    assert_eq!(a, b);
    assert_ne!(a.depth, c.depth);
    assert_eq!(a.rgb.len(), 120);
    assert_eq!(a.depth.len(), 15);
    assert!(matches!(generate_sequence(&spec, 1, 0.0, "z"), Err(Error::Config(_))));
}

#[test]
fn keyframes_match_full_sequence() {
    let spec = small_spec(4);
    let seq = generate_sequence(&spec, 5, 0.4, "k").unwrap();
    assert_eq!(Keyframes::from_sequence(&seq).unwrap(), Keyframes::render(&spec, 5, 0.4, "k").unwrap());
}

#[test]
fn static_scene_depth_is_constant() {
    let ds = DatasetSpec {
        static_scene: true,
        width: 48,
        height: 32,
        ..DatasetSpec::default()
    };
    let r = SceneRenderer::new(&ds.scene(1, 9, 1.0), 9).unwrap();
    let first = r.ground_truth_depth(r.depth_timestamp(0));
    for i in 1..30 {
        assert_eq!(r.ground_truth_depth(r.depth_timestamp(i)), first);
    }
}

/// Per-pixel nearest-surface depth computed from the spec alone.
fn ray_depth(spec: &SceneSpec, t: f64, x: f64, y: f64) -> f64 {
    let b = &spec.background;
    let mut best = b.depth_mm
        + b.tilt_x_mm_per_px * (x - spec.width as f64 / 2.0)
        + b.tilt_y_mm_per_px * (y - spec.height as f64 / 2.0);
    for s in &spec.shapes {
        let mut seg = &s.trajectory[0];
        for cand in &s.trajectory {
            if cand.start_s <= t {
                seg = cand;
            }
        }
        let cx = seg.position[0] + seg.velocity[0] * (t - seg.start_s);
        let cy = seg.position[1] + seg.velocity[1] * (t - seg.start_s);
        let (u, v) = ((x - cx) / (s.size_px[0] / 2.0), (y - cy) / (s.size_px[1] / 2.0));
        let hit = match s.kind {
            ShapeKind::Rectangle => u.abs() <= 1.0 && v.abs() <= 1.0,
            ShapeKind::Ellipse => u * u + v * v <= 1.0,
        };
        if hit && s.depth_mm < best {
            best = s.depth_mm;
        }
    }
    best
}

#[test]
fn ground_truth_matches_ray_oracle() {
    let spec = DatasetSpec::default().scene(2, 77, 3.0);
    let r = SceneRenderer::new(&spec, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in (0..90).step_by(7) {
        let ts = r.depth_timestamp(i);
        let gt = r.ground_truth_depth(ts);
        for _ in 0..400 {
            let (x, y) = (rng.gen_range(0..spec.width), rng.gen_range(0..spec.height));
            let want = ray_depth(&spec, ts as f64 / 1e6, x as f64, y as f64).round();
            assert_eq!(gt.get(x, y, 0) as f64, want, "frame {i} pixel ({x}, {y})");
        }
    }
}

#[test]
fn invalid_pixels_have_a_source() {
    let spec = DatasetSpec::default().scene(0, 5, 1.0);
    let r = SceneRenderer::new(&spec, 5).unwrap();
    let band = spec.invalid_model.edge_band_px as isize;
    for i in [0, 9, 21] {
        let gt = r.ground_truth_depth(r.depth_timestamp(i));
        let (emitted, trace) = r.emitted_depth(i);
        let (w, h) = (gt.width() as isize, gt.height() as isize);
        let d = |x: isize, y: isize| gt.get(x as usize, y as usize, 0) as f64;
        let is_disc = |x: isize, y: isize| {
            [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|&(dx, dy)| {
                let (nx, ny) = (x + dx, y + dy);
                nx >= 0 && ny >= 0 && nx < w && ny < h && (d(nx, ny) - d(x, y)).abs() > spec.invalid_model.discontinuity_mm
            })
        };
        for y in 0..h {
            for x in 0..w {
                let idx = (y * w + x) as usize;
                let near_edge = (-(band - 1)..band).any(|dy| {
                    (-(band - 1)..band).any(|dx| {
                        let (qx, qy) = (x + dx, y + dy);
                        qx >= 0 && qy >= 0 && qx < w && qy < h && is_disc(qx, qy)
                    })
                });
                assert_eq!(trace.edge[idx], near_edge);
                if emitted.get(x as usize, y as usize, 0) == 0 {
                    assert!(near_edge || trace.dropout[idx], "frame {i} ({x}, {y}) invalid without a source");
                } else {
                    assert_eq!(emitted.get(x as usize, y as usize, 0), gt.get(x as usize, y as usize, 0));
                }
            }
        }
    }
}

#[test]
fn default_invalid_fraction() {
    let ds = DatasetSpec::default();
    let mut fractions = Vec::new();
    for s in 0..ds.count() {
        let kf = Keyframes::render(&ds.scene(s, 2024, 2.0), 2024 + s as u64, 2.0, "x").unwrap();
        for d in &kf.depth {
            fractions.push(invalid_fraction(&validity_mask(d)));
        }
    }
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    assert!((mean - DEFAULT_INVALID_FRACTION).abs() < 0.01, "mean invalid fraction {mean}");
}

fn brute_sync(rgb: &[i64], t: i64) -> usize {
    let mut best = 0;
    for (k, &r) in rgb.iter().enumerate() {
        if (r - t).abs() < (rgb[best] - t).abs() {
            best = k;
        }
    }
    best
}

#[test]
fn synchronize_rules() {
    let ts: Vec<i64> = (0..10).map(|i| i * 1000).collect();
    let s = synchronize(&ts, &ts).unwrap();
    assert!(s.pairs.iter().all(|&(d, r)| d == r));
    assert!(s.residual_us.iter().all(|&r| r == 0));

    let rgb: Vec<i64> = (0..240).map(|k| autodepth::synth::timestamp_us(k, 240)).collect();
    let depth: Vec<i64> = (0..30).map(|i| autodepth::synth::timestamp_us(i, 30)).collect();
    let s = synchronize(&rgb, &depth).unwrap();
    assert!(s.pairs.iter().all(|&(d, r)| r == 8 * d));

    let shifted: Vec<i64> = rgb.iter().map(|t| t + 2000).collect();
    let s = synchronize(&shifted, &depth).unwrap();
    for &(d, r) in &s.pairs {
        assert_eq!(r, brute_sync(&shifted, depth[d]));
        assert!(s.residual_us[d] <= 4167 / 2 + 1);
    }
    // Exact tie resolves to the earlier color frame.
    assert_eq!(synchronize(&[0, 10], &[5]).unwrap().pairs, vec![(0, 0)]);
    assert!(matches!(synchronize(&[], &[1]), Err(Error::Sync(_))));
    assert!(matches!(synchronize(&[1], &[]), Err(Error::Sync(_))));
}

proptest! {
    #[test]
    fn synchronize_matches_exhaustive_search(
        mut rgb in proptest::collection::btree_set(-50_000i64..50_000, 1..60),
        depth in proptest::collection::btree_set(-60_000i64..60_000, 1..30),
    ) {
        let rgb: Vec<i64> = std::mem::take(&mut rgb).into_iter().collect();
        let depth: Vec<i64> = depth.into_iter().collect();
        let s = synchronize(&rgb, &depth).unwrap();
        for &(d, r) in &s.pairs {
            prop_assert_eq!(r, brute_sync(&rgb, depth[d]));
        }
    }
}

#[test]
fn sample_assembly() {
    let spec = small_spec(8);
    let seq = generate_sequence(&spec, 2, 10.0 / 30.0, "s").unwrap();
    assert_eq!(seq.depth.len(), 10);
    let sync = synchronize(&seq.rgb_timestamps(), &seq.depth_timestamps()).unwrap();
    let one = make_samples(&seq, &sync, 1).unwrap();
    assert_eq!(one.len(), 9);
    let three = make_samples(&seq, &sync, 3).unwrap();
    assert_eq!(three.len(), 7);
    // C_next of sample t at delta 3 is the color frame paired with depth t + 3.
    assert_eq!(three[2].c_next, seq.rgb[8 * 5].image.to_tensor());
    assert_eq!(three[2].gt, seq.depth[5].image.to_tensor(5000.0));
    for s in &one {
        assert_eq!(s.hw(), (40, 64));
    }
    assert!(make_samples(&seq, &sync, 10).unwrap().is_empty());
}

#[test]
fn leave_one_out() {
    let names: Vec<String> = (0..6).map(|i| format!("seq{i}")).collect();
    let (train, test) = loso_split(names.clone(), "seq3").unwrap();
    assert_eq!(train.len(), 5);
    assert_eq!(test, "seq3");
    assert!(!train.contains(&test));
    let mut covered = Vec::new();
    for n in &names {
        let (tr, te) = loso_split(names.clone(), n).unwrap();
        assert_eq!(tr.len() + 1, names.len());
        covered.push(te);
    }
    assert_eq!(covered, names);
    assert!(matches!(loso_split(names, "nope"), Err(Error::Config(_))));
}

#[test]
fn sequence_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(6);
    let seq = generate_sequence(&spec, 3, 0.2, "io").unwrap();
    let path = dir.path().join("io");
    write_sequence(&seq, &path).unwrap();
    assert_eq!(read_sequence(&path).unwrap(), seq);
    let reader = SequenceReader::open(&path).unwrap();
    assert_eq!(Keyframes::from_reader(&reader).unwrap(), Keyframes::from_sequence(&seq).unwrap());

    // Wrong byte length in one depth frame.
    let d0 = path.join("depth_000000.d16");
    let good = fs::read(&d0).unwrap();
    fs::write(&d0, &good[..good.len() - 2]).unwrap();
    match read_sequence(&path) {
        Err(Error::Format { file, .. }) => assert!(file.ends_with("depth_000000.d16")),
        r => panic!("expected format error, got {r:?}"),
    }
    fs::write(&d0, &good).unwrap();

    // Extra frame file on disk.
    fs::write(path.join("rgb_999999.rgb"), [0u8; 3]).unwrap();
    assert!(matches!(SequenceReader::open(&path), Err(Error::Format { .. })));
    fs::remove_file(path.join("rgb_999999.rgb")).unwrap();

    // Listed file missing.
    fs::remove_file(path.join("rgb_000001.rgb")).unwrap();
    assert!(matches!(SequenceReader::open(&path), Err(Error::Format { .. })));

    fs::write(path.join("manifest.json"), "{ not json").unwrap();
    assert!(matches!(SequenceReader::open(&path), Err(Error::Format { .. })));
}
