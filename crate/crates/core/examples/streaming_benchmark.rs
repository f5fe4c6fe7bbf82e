//! Per-frame timing of the streaming path: full vs half resolution,
//! sequential vs two-stage pipelined, dense vs separable.

use autodepth::model::{NetworkConfig, NetworkGraph};
use autodepth::pipeline::bench;
use autodepth::prep::Preprocess;
use autodepth::synth::{generate_sequence, DatasetSpec};

fn main() -> autodepth::Result<()> {
    let spec = DatasetSpec::default();
    let seq = generate_sequence(&spec.scene(0, 3, 1.0), 3, 1.0, "bench")?;
    let net = NetworkGraph::build(&NetworkConfig::desk_default(), 0)?;
    let prep = Preprocess::new(seq.info.calibration, 2, false);
    let report = bench(&net, &seq, &prep, 100)?;
    print!("{}", report.to_text());
    Ok(())
}
