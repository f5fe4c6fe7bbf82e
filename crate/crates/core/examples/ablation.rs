//! Cascade-count and skip-removal variants, short schedule.

use autodepth::model::{NetworkConfig, SkipConnection};
use autodepth::pipeline::{train_variant, TrainingConfig};
use autodepth::prep::Preprocess;
use autodepth::synth::{loso_split, DatasetSpec, Keyframes};

fn main() -> autodepth::Result<()> {
    let spec = DatasetSpec {
        sequences: 3,
        ..DatasetSpec::default()
    };
    let sets = (0..spec.count())
        .map(|i| {
            let kf = Keyframes::render(&spec.scene(i, 5, 2.0), 5 + i as u64, 2.0, &spec.name(i))?;
            kf.preprocess(&Preprocess::new(kf.info.calibration, 2, false))
        })
        .collect::<autodepth::Result<Vec<_>>>()?;
    let (train_sets, test) = loso_split(sets, "seq2")?;
    let tc = TrainingConfig {
        epochs: 2,
        ..TrainingConfig::default()
    };

    let base = NetworkConfig::desk_default();
    let mut variants: Vec<(String, NetworkConfig)> =
        [2, 3, 4].iter().map(|&c| (format!("cascades {c}"), base.with_cascades(c))).collect();
    for id in SkipConnection::ALL {
        variants.push((format!("without {id}"), base.ablate(id.as_str())?));
    }
    for (name, cfg) in variants {
        let (net, rmse) = train_variant(&cfg, &train_sets, &test, &tc, 1)?;
        println!("{name:<28} {:>8} params  rmse {rmse:.5}", net.param_count());
    }
    Ok(())
}
