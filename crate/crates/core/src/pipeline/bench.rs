use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::stream::{depth_bytes, predict, schedule, stream_infer, FrameSource, Preparer, StreamStep};
use crate::error::{Error, Result};
use crate::model::{NetworkGraph, OpKind, Profile, Sample};
use crate::prep::Preprocess;

pub const WARMUP_FRAMES: usize = 10;
pub const MIN_TIMED_FRAMES: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl Stat {
    pub fn of(d: &[Duration]) -> Stat {
        let ms: Vec<f64> = d.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        let n = ms.len().max(1) as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat {
            mean_ms: mean,
            std_ms: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerShare {
    pub name: String,
    pub kind: OpKind,
    /// Fraction of profiled model time.
    pub share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeReport {
    /// `"full"` or `"half"`.
    pub mode: String,
    pub input: (usize, usize),
    pub model: Stat,
    /// Preprocess + forward + output write, run back to back.
    pub total: Stat,
    pub sequential_fps: f64,
    pub pipelined_fps: f64,
    /// Pipelined outputs equal sequential outputs byte for byte.
    pub pipelined_identical: bool,
    pub layers: Vec<LayerShare>,
    /// Share of model time spent in convolution layers of any kind.
    pub convolution_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchitectureTiming {
    pub separable: bool,
    pub params: usize,
    pub model: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub warmup: usize,
    pub modes: Vec<ModeReport>,
    /// The same topology with dense and with separable convolutions.
    pub architectures: Vec<ArchitectureTiming>,
    pub hardware: String,
}

pub fn hardware_note() -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{} {} with {cores} available core(s), {} kernel thread(s); timings are machine-specific",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

/// Model-only time of `net` on `samples`, after `warmup` untimed runs.
pub fn time_model(net: &NetworkGraph<f32>, samples: &[Sample<f32>], warmup: usize) -> Result<Vec<Duration>> {
    for s in samples.iter().cycle().take(warmup) {
        net.forward(s)?;
    }
    samples
        .iter()
        .map(|s| {
            let t = Instant::now();
            net.forward(s)?;
            Ok(t.elapsed())
        })
        .collect()
}

fn layer_shares(profile: &Profile, model_time: Duration) -> (Vec<LayerShare>, f64) {
    let total = model_time.as_secs_f64().max(1e-12);
    let mut by_name: Vec<(String, OpKind, f64)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for e in &profile.entries {
        let i = *index.entry(e.name.clone()).or_insert_with(|| {
            by_name.push((e.name.clone(), e.kind, 0.0));
            by_name.len() - 1
        });
        by_name[i].2 += e.elapsed.as_secs_f64();
    }
    let conv = by_name.iter().filter(|l| l.1.is_convolution()).map(|l| l.2).sum::<f64>() / total;
    let mut layers: Vec<LayerShare> = by_name
        .into_iter()
        .map(|(name, kind, t)| LayerShare {
            name,
            kind,
            share: t / total,
        })
        .collect();
    layers.sort_by(|a, b| b.share.total_cmp(&a.share));
    (layers, conv)
}

fn bench_mode(net: &NetworkGraph<f32>, src: &dyn FrameSource, prep: &Preprocess, steps: &[StreamStep]) -> Result<ModeReport> {
    let (w, h) = prep.network_dims();
    let net = net.with_input_dims(h, w)?;
    let max = src.info().max_depth_mm as f32;

    // Inputs once, so model timing excludes stage A.
    let mut preparer = Preparer::new(src, prep);
    let prepared = steps.iter().map(|&s| preparer.prepare(s)).collect::<Result<Vec<_>>>()?;
    for p in prepared.iter().take(WARMUP_FRAMES) {
        predict(&net, p, max, prep.half)?;
    }
    let (timed_steps, timed) = (&steps[WARMUP_FRAMES..], &prepared[WARMUP_FRAMES..]);
    let mut model = Vec::with_capacity(timed.len());
    let mut profile = Profile::default();
    let mut profiled_wall = Duration::ZERO;
    for p in timed {
        let t = Instant::now();
        net.forward_inputs(&p.c_t, &p.d_t, &p.c_next)?;
        model.push(t.elapsed());
        let sample = Sample {
            c_t: p.c_t.clone(),
            d_t: p.d_t.clone(),
            c_next: p.c_next.clone(),
            gt: p.d_t.clone(),
            gt_mask: crate::loss::ValidityMask::from_tensor(&p.d_t)?,
        };
        let t = Instant::now();
        net.forward_profiled(&sample, &mut profile)?;
        profiled_wall += t.elapsed();
    }
    let (layers, convolution_share) = layer_shares(&profile, profiled_wall);

    // Full per-frame path, sequential, with output encoding.
    let mut out = std::io::sink();
    let mut seq_bytes = Vec::new();
    let seq = stream_infer(&net, src, prep, timed_steps, false, |_, img| {
        let b = depth_bytes(&img);
        out.write_all(&b).map_err(|e| Error::io("<sink>", e))?;
        seq_bytes.push(b);
        Ok(())
    })?;
    let total: Vec<Duration> = (0..seq.frames)
        .map(|i| seq.prepare[i] + seq.model[i] + seq.write[i])
        .collect();
    let mut k = 0;
    let mut identical = true;
    let pip = stream_infer(&net, src, prep, timed_steps, true, |_, img| {
        let b = depth_bytes(&img);
        out.write_all(&b).map_err(|e| Error::io("<sink>", e))?;
        identical &= seq_bytes.get(k) == Some(&b);
        k += 1;
        Ok(())
    })?;
    Ok(ModeReport {
        mode: if prep.half { "half" } else { "full" }.into(),
        input: (w, h),
        model: Stat::of(&model),
        total: Stat::of(&total),
        sequential_fps: seq.fps(),
        pipelined_fps: pip.fps(),
        pipelined_identical: identical && k == seq_bytes.len(),
        layers,
        convolution_share,
    })
}

/// Benchmarks `net` on the first `warmup + frames` streamed frames of
/// `src` in full and half resolution, and times the dense and separable
/// variants of its topology on the same inputs.
pub fn bench(net: &NetworkGraph<f32>, src: &dyn FrameSource, prep_full: &Preprocess, frames: usize) -> Result<BenchReport> {
    if frames < MIN_TIMED_FRAMES {
        return Err(Error::config(format!("bench needs at least {MIN_TIMED_FRAMES} timed frames, got {frames}")));
    }
    let all = schedule(src)?;
    let need = WARMUP_FRAMES + frames;
    if all.len() < need {
        return Err(Error::format(
            src.info().name.clone(),
            format!("{} streamable frames, bench needs {need}", all.len()),
        ));
    }
    let steps = &all[..need];
    let prep_half = Preprocess {
        half: true,
        ..prep_full.clone()
    };
    let modes = vec![
        bench_mode(net, src, &Preprocess { half: false, ..prep_full.clone() }, steps)?,
        bench_mode(net, src, &prep_half, steps)?,
    ];

    // Architecture timing is independent of weight values.
    let (w, h) = prep_full.network_dims();
    let mut preparer = Preparer::new(src, prep_full);
    let samples = steps
        .iter()
        .map(|&s| {
            let p = preparer.prepare(s)?;
            Sample::new(p.c_t, p.d_t.clone(), p.c_next, p.d_t)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut architectures = Vec::new();
    for separable in [false, true] {
        let cfg = crate::model::NetworkConfig {
            separable,
            ..net.config().with_input(h, w)
        };
        let variant = if separable == net.config().separable {
            net.with_input_dims(h, w)?
        } else {
            NetworkGraph::build(&cfg, 0)?
        };
        let times = time_model(&variant, &samples[WARMUP_FRAMES..], WARMUP_FRAMES)?;
        architectures.push(ArchitectureTiming {
            separable,
            params: variant.param_count(),
            model: Stat::of(&times),
        });
    }
    Ok(BenchReport {
        frames,
        warmup: WARMUP_FRAMES,
        modes,
        architectures,
        hardware: hardware_note(),
    })
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.hardware);
        let _ = writeln!(
            s,
            "{} warmup + {} timed frames; total = preprocess + forward + output write",
            self.warmup, self.frames
        );
        for m in &self.modes {
            let _ = writeln!(
                s,
                "[{}] {}x{}  model {:.3} ± {:.3} ms  total {:.3} ± {:.3} ms  sequential {:.1} fps  pipelined {:.1} fps  identical {}",
                m.mode,
                m.input.0,
                m.input.1,
                m.model.mean_ms,
                m.model.std_ms,
                m.total.mean_ms,
                m.total.std_ms,
                m.sequential_fps,
                m.pipelined_fps,
                m.pipelined_identical
            );
            let _ = writeln!(s, "  convolution share {:.1}%", 100.0 * m.convolution_share);
            for l in m.layers.iter().take(8) {
                let _ = writeln!(s, "  {:<20} {:>6.1}%", l.name, 100.0 * l.share);
            }
        }
        for a in &self.architectures {
            let _ = writeln!(
                s,
                "{:<10} params {:>8}  model {:.3} ± {:.3} ms",
                if a.separable { "separable" } else { "dense" },
                a.params,
                a.model.mean_ms,
                a.model.std_ms
            );
        }
        s
    }
}
