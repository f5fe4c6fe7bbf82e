//! Writes a small synthetic dataset and reports its invalid-pixel rate.
//!
//! cargo run --release --example generate_dataset -- /tmp/autodepth-data

use std::path::PathBuf;

use autodepth::loss::{invalid_fraction, validity_mask};
use autodepth::pipeline::{cmd_gen, open_dataset};
use autodepth::synth::{DatasetSpec, Keyframes};

fn main() -> autodepth::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("autodepth-data"));
    let spec = DatasetSpec {
        sequences: 3,
        ..DatasetSpec::default()
    };
    let summary = cmd_gen(&spec, &out, 42, 2.0)?;
    println!("{} sequences in {}", summary.sequences.len(), out.display());

    for reader in open_dataset(&out)? {
        let kf = Keyframes::from_reader(&reader)?;
        let invalid: f64 = kf.depth.iter().map(|d| invalid_fraction(&validity_mask(d))).sum::<f64>() / kf.len() as f64;
        println!(
            "{:<6} {}x{}  {} rgb / {} depth frames  invalid {:.2}%",
            reader.name(),
            reader.info().width,
            reader.info().height,
            reader.rgb_len(),
            reader.depth_len(),
            100.0 * invalid
        );
    }
    Ok(())
}
