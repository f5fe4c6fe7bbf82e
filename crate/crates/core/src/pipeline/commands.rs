use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::bench::{bench, BenchReport};
use super::config::{apply_threads, RunConfig, TrainingConfig};
use super::stream::{depth_bytes, schedule, stream_infer, StreamTimings};
use super::train::{train, EpochLog};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_sequence, EvalReport, Method};
use crate::flow::FlowConfig;
use crate::model::{load_weights, save_weights, NetworkConfig, NetworkGraph};
use crate::prep::Preprocess;
use crate::synth::{generate_sequence, loso_split, write_sequence, DatasetSpec, Keyframes, SequenceReader, MANIFEST};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenSummary {
    pub sequences: Vec<String>,
    pub rgb_frames: usize,
    pub depth_frames: usize,
}

/// Parses a dataset spec; the default spec when `path` is `None`.
pub fn load_dataset_spec(path: Option<&Path>) -> Result<DatasetSpec> {
    let spec = match path {
        None => DatasetSpec::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| {
                Error::config(format!("{}: line {} column {}: {e}", p.display(), e.line(), e.column()))
            })?
        }
    };
    spec.validate()?;
    Ok(spec)
}

/// Writes every sequence of `spec` under `out/<name>`.
pub fn cmd_gen(spec: &DatasetSpec, out: &Path, seed: u64, duration_s: f64) -> Result<GenSummary> {
    spec.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::config(format!("duration must be positive, got {duration_s}")));
    }
    let mut summary = GenSummary {
        sequences: Vec::new(),
        rgb_frames: 0,
        depth_frames: 0,
    };
    for i in 0..spec.count() {
        let name = spec.name(i);
        let seq = generate_sequence(&spec.scene(i, seed, duration_s), seed.wrapping_add(i as u64), duration_s, &name)?;
        write_sequence(&seq, &out.join(&name))?;
        summary.rgb_frames += seq.rgb.len();
        summary.depth_frames += seq.depth.len();
        summary.sequences.push(name);
    }
    Ok(summary)
}

/// Every sequence directory (one holding a manifest) under `dir`, by name.
pub fn open_dataset(dir: &Path) -> Result<Vec<SequenceReader>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(dir.display().to_string(), "no sequence directories found"));
    }
    let mut out: Vec<SequenceReader> = dirs.iter().map(|d| SequenceReader::open(d)).collect::<Result<_>>()?;
    out.sort_by(|a, b| a.name().cmp(b.name()));
    Ok(out)
}

/// Preprocessing that maps `reader`'s frames onto the network input.
pub fn preprocess_for(reader: &SequenceReader, net_cfg: &NetworkConfig, half: bool) -> Result<Preprocess> {
    let info = reader.info();
    let (w, h) = (net_cfg.input_w, net_cfg.input_h);
    let factor = info.width / w.max(1);
    if factor == 0 || info.width != w * factor || info.height != h * factor {
        return Err(Error::format(
            info.name.clone(),
            format!(
                "{}x{} frames do not center-crop onto the {w}x{h} network input",
                info.width, info.height
            ),
        ));
    }
    Ok(Preprocess::new(info.calibration, factor, half))
}

fn keyframes(reader: &SequenceReader, prep: &Preprocess) -> Result<Keyframes> {
    Keyframes::from_reader(reader)?.preprocess(prep)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub held_out: String,
    pub train_sequences: Vec<String>,
    pub params: usize,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub weights: PathBuf,
    /// Held-out naive baseline at the training delta, for reference.
    pub held_out_naive_rmse: f64,
}

/// Trains on every sequence but the held-out one and writes the weights
/// and a per-epoch JSON-lines log.
pub fn cmd_train(cfg: &RunConfig, mut progress: impl FnMut(&EpochLog)) -> Result<TrainSummary> {
    cfg.validate()?;
    apply_threads(cfg.runtime.threads);
    let readers = open_dataset(&cfg.data.dataset_dir)?;
    let (train_r, test_r) = loso_split(readers, &cfg.data.held_out)?;
    if train_r.is_empty() {
        return Err(Error::config("leave-one-out split leaves no training sequence"));
    }
    let prep = Preprocess::new(test_r.info().calibration, cfg.data.crop_factor, false);
    let test = keyframes(&test_r, &prep)?;
    let train_sets = train_r
        .iter()
        .map(|r| keyframes(r, &Preprocess::new(r.info().calibration, cfg.data.crop_factor, false)))
        .collect::<Result<Vec<_>>>()?;
    let mut lines = String::new();
    let outcome = train(
        &cfg.network,
        &train_sets,
        Some(&test),
        &cfg.training,
        cfg.data.delta_frames,
        |e| {
            lines.push_str(&serde_json::to_string(e).expect("log serializes"));
            lines.push('\n');
            progress(e);
        },
    )?;
    if outcome.log.is_empty() {
        lines.push_str("{\"epochs\":0,\"note\":\"no training epochs; initial weights written\"}\n");
    }
    if let Some(parent) = cfg.output.weights.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_weights(&outcome.net, &cfg.output.weights)?;
    fs::write(&cfg.output.log, lines).map_err(|e| Error::io(&cfg.output.log, e))?;
    let naive = evaluate_sequence(&test, None, &[Method::Naive], cfg.data.delta_frames, &cfg.flow)?;
    Ok(TrainSummary {
        held_out: test.name().to_string(),
        train_sequences: train_sets.iter().map(|k| k.name().to_string()).collect(),
        params: outcome.net.param_count(),
        epochs: outcome.log,
        best_epoch: outcome.best_epoch,
        weights: cfg.output.weights.clone(),
        held_out_naive_rmse: naive.rows[0].rmse,
    })
}

/// Naive, flow and network on the held-out sequence, plus the δ sweep.
pub fn cmd_eval(weights: &Path, data: &Path, held_out: &str, deltas: &[usize], flow: &FlowConfig) -> Result<EvalReport> {
    if deltas.is_empty() || deltas.contains(&0) {
        return Err(Error::config("deltas must be a non-empty list of positive frame counts"));
    }
    let net = load_weights(weights, None)?;
    let readers = open_dataset(data)?;
    let (_, test) = loso_split(readers, held_out)?;
    let prep = preprocess_for(&test, net.config(), false)?;
    evaluate(&[keyframes(&test, &prep)?], &net, deltas, flow)
}

#[derive(Clone, Debug, Serialize)]
pub struct InferSummary {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub pipelined: bool,
    pub half: bool,
}

#[derive(Serialize)]
struct PredEntry {
    file: String,
    timestamp_us: i64,
    rgb_index: usize,
    depth_index: usize,
}

#[derive(Serialize)]
struct PredIndex {
    name: String,
    width: usize,
    height: usize,
    max_depth_mm: f64,
    frames: Vec<PredEntry>,
}

/// Streams one predicted depth frame per color frame into `out`.
pub fn cmd_infer(weights: &Path, seq: &Path, out: &Path, half: bool, pipelined: bool) -> Result<InferSummary> {
    let reader = SequenceReader::open(seq)?;
    let net = load_weights(weights, None)?;
    let prep = preprocess_for(&reader, net.config(), half)?;
    let (w, h) = prep.network_dims();
    let net = net.with_input_dims(h, w)?;
    let steps = schedule(&reader)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(steps.len());
    let (cw, ch) = prep.crop_dims();
    let timings: StreamTimings = stream_infer(&net, &reader, &prep, &steps, pipelined, |step, img| {
        let file = format!("pred_{:06}.d16", step.rgb_index);
        let p = out.join(&file);
        fs::write(&p, depth_bytes(&img)).map_err(|e| Error::io(p, e))?;
        entries.push(PredEntry {
            file,
            timestamp_us: step.timestamp_us,
            rgb_index: step.rgb_index,
            depth_index: step.depth_index,
        });
        Ok(())
    })?;
    let index = PredIndex {
        name: reader.name().to_string(),
        width: cw,
        height: ch,
        max_depth_mm: reader.info().max_depth_mm,
        frames: entries,
    };
    let p = out.join("predictions.json");
    fs::write(&p, serde_json::to_string_pretty(&index).expect("index serializes")).map_err(|e| Error::io(p, e))?;
    Ok(InferSummary {
        frames: timings.frames,
        width: cw,
        height: ch,
        fps: timings.fps(),
        pipelined,
        half,
    })
}

pub fn cmd_bench(weights: &Path, seq: &Path, frames: usize) -> Result<BenchReport> {
    let reader = SequenceReader::open(seq)?;
    let net = load_weights(weights, None)?;
    let prep = preprocess_for(&reader, net.config(), false)?;
    bench(&net, &reader, &prep, frames)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub cascades: usize,
    pub dropped: Option<String>,
    pub params: usize,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub held_out: String,
    pub epochs: usize,
    pub naive_rmse: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "held-out {} | {} epochs per variant | naive {:.5}\n{:<28} {:>8} {:>10} {:>10}\n",
            self.held_out, self.epochs, self.naive_rmse, "variant", "cascades", "params", "rmse"
        );
        for r in &self.rows {
            let _ = writeln!(s, "{:<28} {:>8} {:>10} {:>10.5}", r.variant, r.cascades, r.params, r.rmse);
        }
        s
    }
}

/// Trains one variant and returns its held-out network RMSE.
pub fn train_variant(
    cfg: &NetworkConfig,
    train_sets: &[Keyframes],
    test: &Keyframes,
    tc: &TrainingConfig,
    delta: usize,
) -> Result<(NetworkGraph<f32>, f64)> {
    let outcome = train(cfg, train_sets, None, tc, delta, |_| {})?;
    let r = evaluate_sequence(test, Some(&outcome.net), &[Method::Network], delta, &FlowConfig::default())?;
    Ok((outcome.net, r.rows[0].rmse))
}

/// Cascade-count and skip-removal variants on one leave-one-out split.
pub fn cmd_ablate(cfg: &RunConfig, mut progress: impl FnMut(&AblationRow)) -> Result<AblationReport> {
    cfg.validate()?;
    apply_threads(cfg.runtime.threads);
    let readers = open_dataset(&cfg.data.dataset_dir)?;
    let (train_r, test_r) = loso_split(readers, &cfg.data.held_out)?;
    let pp = |r: &SequenceReader| keyframes(r, &Preprocess::new(r.info().calibration, cfg.data.crop_factor, false));
    let test = pp(&test_r)?;
    let train_sets = train_r.iter().map(pp).collect::<Result<Vec<_>>>()?;
    let tc = TrainingConfig {
        epochs: cfg.ablation.epochs.unwrap_or(cfg.training.epochs),
        ..cfg.training.clone()
    };
    let delta = cfg.data.delta_frames;
    let mut variants: Vec<(String, NetworkConfig, Option<String>)> = cfg
        .ablation
        .cascades
        .iter()
        .map(|&c| (format!("cascades {c}"), cfg.network.with_cascades(c), None))
        .collect();
    for id in &cfg.ablation.drop_skips {
        variants.push((format!("without {id}"), cfg.network.ablate(id.as_str())?, Some(id.to_string())));
    }
    let mut rows = Vec::new();
    for (variant, net_cfg, dropped) in variants {
        let (net, rmse) = train_variant(&net_cfg, &train_sets, &test, &tc, delta)?;
        let row = AblationRow {
            variant,
            cascades: net_cfg.cascades,
            dropped,
            params: net.param_count(),
            rmse,
        };
        progress(&row);
        rows.push(row);
    }
    let naive = evaluate_sequence(&test, None, &[Method::Naive], delta, &cfg.flow)?;
    Ok(AblationReport {
        held_out: test.name().to_string(),
        epochs: tc.epochs,
        naive_rmse: naive.rows[0].rmse,
        rows,
    })
}
