//! Leave-one-out training on in-memory keyframes, then the comparison
//! table against the naive and optical-flow baselines.

use autodepth::eval::{evaluate, Method};
use autodepth::flow::FlowConfig;
use autodepth::model::NetworkConfig;
use autodepth::pipeline::{train, TrainingConfig};
use autodepth::prep::Preprocess;
use autodepth::synth::{loso_split, DatasetSpec, Keyframes};

fn main() -> autodepth::Result<()> {
    let spec = DatasetSpec {
        sequences: 4,
        ..DatasetSpec::default()
    };
    let duration = 3.0;
    let mut sets = Vec::new();
    for i in 0..spec.count() {
        let kf = Keyframes::render(&spec.scene(i, 1, duration), 1 + i as u64, duration, &spec.name(i))?;
        let prep = Preprocess::new(kf.info.calibration, 2, false);
        sets.push(kf.preprocess(&prep)?);
    }
    let (train_sets, test) = loso_split(sets, "seq3")?;

    let cfg = NetworkConfig::desk_default();
    let tc = TrainingConfig {
        epochs: 3,
        ..TrainingConfig::default()
    };
    let outcome = train(&cfg, &train_sets, Some(&test), &tc, 1, |e| {
        println!("epoch {}  loss {:.4}  held-out {:.4}", e.epoch, e.train_loss, e.held_out_rmse.unwrap_or(f64::NAN));
    })?;

    let report = evaluate(&[test], &outcome.net, &[1, 2, 3], &FlowConfig::default())?;
    print!("{}", report.to_text());
    let (n, f, b) = (
        report.average(Method::Network, 1).unwrap(),
        report.average(Method::Flow, 1).unwrap(),
        report.average(Method::Naive, 1).unwrap(),
    );
    println!("network {n:.4} / flow {f:.4} / naive {b:.4}");
    Ok(())
}
