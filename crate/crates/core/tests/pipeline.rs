use std::fs;
use std::path::Path;
use std::process::Command;

use autodepth::eval::{evaluate, evaluate_sequence, Method};
use autodepth::flow::FlowConfig;
use autodepth::model::{load_weights, save_weights, NetworkConfig, NetworkGraph, SkipFlags};
use autodepth::pipeline::{
    cmd_eval, cmd_gen, cmd_infer, cmd_train, schedule, stream_infer, train, RunConfig, TrainingConfig,
};
use autodepth::prep::Preprocess;
use autodepth::synth::{generate_sequence, DatasetSpec, Keyframes, SequenceReader};
use autodepth::Error;

fn small_spec() -> DatasetSpec {
    DatasetSpec {
        sequences: 3,
        width: 64,
        height: 40,
        size_px: [8.0, 14.0],
        ..DatasetSpec::default()
    }
}

fn small_net() -> NetworkConfig {
    NetworkConfig {
        cascades: 2,
        base_filters: 4,
        input_h: 20,
        input_w: 32,
        skips: SkipFlags::ALL,
        separable: false,
        bottleneck_convs: 1,
    }
}

fn run_config(epochs: usize) -> String {
    format!(
        r#"{{
  "network": {},
  "training": {{"lr": 0.002, "batch_size": 4, "epochs": {epochs}, "seed": 3}},
  "data": {{"dataset_dir": "data", "held_out": "seq2"}},
  "output": {{"weights": "out/w.adnw", "log": "out/log.jsonl"}}
}}"#,
        serde_json::to_string(&small_net()).unwrap()
    )
}

fn checksum(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn gen_is_deterministic_and_rejects_zero_duration() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        sequences: 2,
        ..small_spec()
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let s = cmd_gen(&spec, &a, 9, 0.5).unwrap();
    cmd_gen(&spec, &b, 9, 0.5).unwrap();
    assert_eq!(s.sequences, vec!["seq0", "seq1"]);
    assert_eq!(s.rgb_frames, 2 * 120);
    assert_eq!(s.depth_frames, 2 * 15);
    for name in &s.sequences {
        assert_eq!(checksum(&a.join(name)), checksum(&b.join(name)));
    }
    assert!(matches!(cmd_gen(&spec, &tmp.path().join("c"), 9, 0.0), Err(Error::Config(_))));
}

#[test]
fn run_config_rejects_unknown_keys_and_resolves_paths() {
    let text = run_config(1);
    let cfg = RunConfig::from_json(&text).unwrap();
    assert_eq!(cfg.network, small_net());
    assert!(cfg.runtime.pipelined);

    let bad = text.replacen("\"seed\": 3", "\"seed\": 3, \"momentum\": 0.9", 1);
    match RunConfig::from_json(&bad) {
        Err(Error::Config(m)) => assert!(m.contains("momentum"), "{m}"),
        r => panic!("expected config error, got {r:?}"),
    }

    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("run.json");
    fs::write(&p, &text).unwrap();
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg.data.dataset_dir, tmp.path().join("data"));
    assert_eq!(cfg.output.weights, tmp.path().join("out/w.adnw"));
}

#[test]
fn train_zero_epochs_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_gen(&small_spec(), &tmp.path().join("data"), 4, 1.0).unwrap();
    let p = tmp.path().join("run.json");
    fs::write(&p, run_config(0)).unwrap();
    let cfg = RunConfig::load(&p).unwrap();
    let s = cmd_train(&cfg, |_| {}).unwrap();
    assert!(s.epochs.is_empty());
    assert_eq!(s.held_out, "seq2");
    let w = load_weights(&cfg.output.weights, Some(&small_net())).unwrap();
    let fresh = NetworkGraph::<f32>::build(&small_net(), 3).unwrap();
    assert_eq!(autodepth::model::write_weights(&w), autodepth::model::write_weights(&fresh));
    assert!(fs::read_to_string(&cfg.output.log).unwrap().contains("\"epochs\":0"));

    let r = cmd_eval(&cfg.output.weights, &cfg.data.dataset_dir, "seq2", &[1, 2], &FlowConfig::default()).unwrap();
    for (m, d) in [(Method::Naive, 1), (Method::Flow, 1), (Method::Network, 1), (Method::Network, 2), (Method::InputVsGt, 2)] {
        let row = r.get(m, "seq2", d).unwrap();
        assert!(row.rmse.is_finite() && row.n_frames > 0);
    }
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for key in ["method", "sequence", "rmse", "n_frames", "valid_fraction"] {
        assert!(json["rows"][0].get(key).is_some(), "missing {key}");
    }
    assert!(matches!(
        cmd_eval(&cfg.output.weights, &cfg.data.dataset_dir, "seq2", &[], &FlowConfig::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn training_is_reproducible() {
    let spec = small_spec();
    let net = small_net();
    let kfs: Vec<Keyframes> = (0..2)
        .map(|i| {
            let kf = Keyframes::render(&spec.scene(i, 1, 1.0), 1 + i as u64, 1.0, &spec.name(i)).unwrap();
            kf.preprocess(&Preprocess::new(kf.info.calibration, 2, false)).unwrap()
        })
        .collect();
    let tc = TrainingConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainingConfig::default()
    };
    let a = train(&net, &kfs[..1], Some(&kfs[1]), &tc, 1, |_| {}).unwrap();
    let b = train(&net, &kfs[..1], Some(&kfs[1]), &tc, 1, |_| {}).unwrap();
    assert_eq!(a.log.iter().map(|e| e.train_loss).collect::<Vec<_>>(), b.log.iter().map(|e| e.train_loss).collect::<Vec<_>>());
    assert_eq!(a.log.len(), 2);
    assert!(a.log.iter().all(|e| e.held_out_rmse.is_some()));

    let wrong = NetworkConfig {
        input_w: 64,
        ..net
    };
    assert!(matches!(train(&wrong, &kfs[..1], None, &tc, 1, |_| {}), Err(Error::Config(_))));
}

#[test]
fn static_scene_naive_is_exact_and_average_is_mean() {
    let spec = DatasetSpec {
        static_scene: true,
        ..small_spec()
    };
    let kfs: Vec<Keyframes> = (0..2)
        .map(|i| {
            let kf = Keyframes::render(&spec.scene(i, 5, 0.5), 5, 0.5, &spec.name(i)).unwrap();
            kf.preprocess(&Preprocess::new(kf.info.calibration, 2, false)).unwrap()
        })
        .collect();
    let net = NetworkGraph::<f32>::build(&small_net(), 0).unwrap();
    let r = evaluate(&kfs, &net, &[1], &FlowConfig::default()).unwrap();
    for kf in &kfs {
        assert_eq!(r.get(Method::Naive, kf.name(), 1).unwrap().rmse_input_valid, 0.0);
    }
    for m in [Method::Naive, Method::Flow, Method::Network] {
        let per: Vec<f64> = kfs.iter().map(|k| r.get(m, k.name(), 1).unwrap().rmse).collect();
        assert_eq!(r.average(m, 1).unwrap(), per.iter().sum::<f64>() / per.len() as f64);
    }
    // Identical inputs, identical report.
    assert_eq!(r, evaluate(&kfs, &net, &[1], &FlowConfig::default()).unwrap());
    assert!(matches!(
        evaluate_sequence(&kfs[0], None, &[Method::Network], 1, &FlowConfig::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn pipelined_stream_matches_sequential() {
    let spec = small_spec();
    let seq = generate_sequence(&spec.scene(0, 2, 0.3), 2, 0.3, "s").unwrap();
    let steps = schedule(&seq).unwrap();
    // One output per color frame, in order.
    assert_eq!(steps.len(), seq.rgb.len());
    assert!(steps.windows(2).all(|w| w[1].rgb_index == w[0].rgb_index + 1));
    assert!(steps.iter().all(|s| s.key_rgb_index == 8 * s.depth_index && s.rgb_index < s.key_rgb_index + 8));

    for half in [false, true] {
        let prep = Preprocess::new(seq.info.calibration, 2, half);
        let (w, h) = prep.network_dims();
        let net = NetworkGraph::<f32>::build(&small_net().with_input(h, w), 1).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        stream_infer(&net, &seq, &prep, &steps, false, |s, img| {
            a.push((s, img));
            Ok(())
        })
        .unwrap();
        stream_infer(&net, &seq, &prep, &steps, true, |s, img| {
            b.push((s, img));
            Ok(())
        })
        .unwrap();
        assert_eq!(a, b);
        for (s, img) in &a {
            assert_eq!((img.width(), img.height()), (32, 20));
            if half {
                let d = prep.depth_cropped(&seq.depth[s.depth_index].image).unwrap();
                for (p, q) in img.data().iter().zip(d.data()) {
                    if *q == 0 {
                        assert_eq!(*p, 0);
                    }
                }
            }
        }
    }
}

#[test]
fn infer_writes_one_frame_per_color_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = DatasetSpec {
        sequences: 1,
        ..small_spec()
    };
    cmd_gen(&spec, &tmp.path().join("data"), 1, 0.2).unwrap();
    let w = tmp.path().join("w.adnw");
    save_weights(&NetworkGraph::build(&small_net(), 0).unwrap(), &w).unwrap();
    let seq = tmp.path().join("data/seq0");
    let out = tmp.path().join("pred");
    let s = cmd_infer(&w, &seq, &out, true, true).unwrap();
    let n = SequenceReader::open(&seq).unwrap().rgb_len();
    assert_eq!(s.frames, n);
    let files = fs::read_dir(&out).unwrap().count();
    assert_eq!(files, n + 1);
    assert_eq!(fs::read(out.join("pred_000000.d16")).unwrap().len(), 2 * 32 * 20);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_autodepth"))
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = bin()
        .args(["gen", "--out"])
        .arg(tmp.path().join("d"))
        .args(["--seed", "1", "--duration", "0.1"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));

    let zero = bin().args(["gen", "--out"]).arg(tmp.path().join("e")).args(["--duration", "0"]).output().unwrap();
    assert_eq!(zero.status.code(), Some(1));

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, "{\"network\": {}}").unwrap();
    let bad = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let junk = tmp.path().join("junk.adnw");
    fs::write(&junk, b"not weights").unwrap();
    let fmt = bin()
        .args(["eval", "--weights"])
        .arg(&junk)
        .arg("--data")
        .arg(tmp.path().join("d"))
        .args(["--held-out", "seq0"])
        .output()
        .unwrap();
    assert_eq!(fmt.status.code(), Some(2));
}

#[test]
fn shipped_config_loads() {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json");
    let cfg = RunConfig::load(&p).unwrap();
    assert_eq!(cfg.network, NetworkConfig::desk_default());
    assert_eq!(cfg.data.held_out, "seq5");
    assert!(cfg.data.dataset_dir.ends_with("data"));
}
